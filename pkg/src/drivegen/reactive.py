"""Reactive environment: IDM-controlled agents responding to the ego.

A rollout executes the ego plan with the LQR tracker and advances every
vehicle agent with IDM longitudinal control plus pure-pursuit centerline
following. Agents update synchronously from the previous frame, in
ascending id order, so results are independent of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .control import DEFAULT_STEER_MAX, LqrParams, VehicleLimits, lqr_track
from .errors import RolloutError
from .geometry import PolylineOps, _cached_ops, polyline_ops, wrap_angle
from .scenario import (
    DEFAULT_EGO_LENGTH,
    Lane,
    MapModel,
    Pose2D,
    Scenario,
    Trajectory,
    VehicleState,
)

MODE_REACTIVE = "reactive"
MODE_NONREACTIVE = "nonreactive"
MODE_LOG_REPLAY_EGO = "log-replay-ego"
MODES = (MODE_REACTIVE, MODE_NONREACTIVE, MODE_LOG_REPLAY_EGO)

DEFAULT_B_HARD = 4.0
PURE_PURSUIT_LOOKAHEAD = 8.0
LEADER_LOOKAHEAD = 100.0


@dataclass(frozen=True, slots=True)
class IdmParams:
    v_desired: float = 13.0
    headway: float = 1.5
    s0: float = 2.0
    a_max: float = 1.5
    b_comf: float = 2.0
    delta: float = 4.0


@dataclass(frozen=True, slots=True)
class SceneStates:
    """Per-frame states of the ego and every agent over a frame window."""

    dt: float
    t_start: int
    t_end: int
    ego: tuple[VehicleState, ...]
    agents: Mapping[str, tuple[VehicleState, ...]]

    def __post_init__(self):
        n = self.t_end - self.t_start + 1
        if len(self.ego) != n:
            raise ValueError("ego state count does not match frame range")
        for aid, states in self.agents.items():
            if len(states) != n:
                raise ValueError(f"agent {aid} state count does not match frame range")

    @property
    def frame_count(self) -> int:
        return self.t_end - self.t_start + 1


def idm_accel(
    v: float,
    leader: tuple[float, float] | None,
    p: IdmParams,
    b_hard: float = DEFAULT_B_HARD,
) -> float:
    """IDM longitudinal acceleration, clamped to [-b_hard, a_max].

    `leader` is (leader speed, bumper-to-bumper gap) or None on a free road.
    """
    free = (v / p.v_desired) ** p.delta
    if leader is None:
        a = p.a_max * (1.0 - free)
    else:
        v_lead, gap = leader
        s_star = p.s0 + max(
            0.0, v * p.headway + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b_comf))
        )
        a = p.a_max * (1.0 - free - (s_star / gap) ** 2)
    return max(-b_hard, min(p.a_max, a))


def lane_centerline_ops(lane: Lane) -> PolylineOps:
    """Projection operator for the lane centerline in its travel direction."""
    return _cached_ops(
        lane,
        lambda l: PolylineOps(l.polyline if l.direction >= 0 else l.polyline[::-1]),
    )


def assign_lane(x: float, y: float, map_model: MapModel) -> int:
    """Index of the lane whose centerline is closest to (x, y)."""
    best_i, best_d = 0, math.inf
    for i, lane in enumerate(map_model.lanes):
        d = polyline_ops(lane.polyline).min_dist2(x, y)
        if d < best_d:
            best_i, best_d = i, d
    return best_i


def select_leader(
    agent_id: str,
    scene: Mapping[str, tuple[VehicleState, float]],
    map_model: MapModel,
) -> tuple[float, float] | None:
    """Nearest entity ahead of an agent along its lane.

    `scene` maps entity id (including "ego") to (state, body length).
    Returns (leader speed, bumper-to-bumper gap) or None. Candidates must sit
    within half a lane width of the centerline and at most 100 m ahead; ties
    on distance break by ascending id.
    """
    state, length = scene[agent_id]
    lane = map_model.lanes[assign_lane(state.pose.x, state.pose.y, map_model)]
    ops = lane_centerline_ops(lane)
    s_self, _, _ = ops.project(state.pose.x, state.pose.y)

    best: tuple[float, str, float, float] | None = None  # (ds, id, v, gap)
    for other_id in sorted(scene.keys()):
        if other_id == agent_id:
            continue
        other, other_len = scene[other_id]
        s_o, lat_o, _ = ops.project(other.pose.x, other.pose.y)
        if abs(lat_o) > 0.5 * lane.width:
            continue
        ds = s_o - s_self
        if ds <= 0.0 or ds > LEADER_LOOKAHEAD:
            continue
        if best is None or ds < best[0]:
            gap = ds - 0.5 * length - 0.5 * other_len
            best = (ds, other_id, other.vel_lon, gap)
    if best is None:
        return None
    return (best[2], best[3])


def _agent_step(state: VehicleState, accel: float, steering: float, dt: float, wheelbase: float) -> VehicleState:
    v = state.vel_lon
    x = state.pose.x + dt * v * math.cos(state.pose.theta)
    y = state.pose.y + dt * v * math.sin(state.pose.theta)
    theta = wrap_angle(state.pose.theta + dt * v * math.tan(steering) / wheelbase)
    new_v = max(0.0, v + dt * accel)
    return VehicleState(
        pose=Pose2D(x, y, theta),
        vel_lon=new_v,
        vel_lat=0.0,
        accel=(new_v - v) / dt,
        steering=steering,
    )


def rollout(
    scenario: Scenario,
    ego_plan: Trajectory,
    t_start: int,
    horizon: int,
    mode: str = MODE_REACTIVE,
    idm: IdmParams | None = None,
    lqr: LqrParams | None = None,
    limits: VehicleLimits | None = None,
    b_hard: float = DEFAULT_B_HARD,
    ego_start: VehicleState | None = None,
    agent_init: Mapping[str, VehicleState] | None = None,
) -> SceneStates:
    """Simulate a frame window [t_start, t_start + horizon].

    The ego executes `ego_plan` through the LQR tracker (or replays the log
    in log-replay-ego mode). Agents replay their logged tracks in nonreactive
    and log-replay-ego modes, and run IDM + pure pursuit in reactive mode.
    `ego_start` / `agent_init` optionally override the initial states, which
    is how the second simulation stage continues from perturbed states.

    Deterministic: equal inputs give bitwise-equal outputs.
    """
    if mode not in MODES:
        raise RolloutError(f"unknown mode '{mode}'")
    if ego_plan.dt != scenario.dt:
        raise RolloutError(
            f"ego_plan dt {ego_plan.dt} does not match scenario dt {scenario.dt}"
        )
    if t_start < 0 or horizon < 1 or t_start + horizon > scenario.frame_count - 1:
        raise RolloutError(
            f"window [{t_start}, {t_start + horizon}] outside scenario frames "
            f"[0, {scenario.frame_count - 1}]"
        )
    idm = idm or IdmParams()
    lqr = lqr or LqrParams()
    lim = limits or VehicleLimits()
    t_end = t_start + horizon

    # --- ego
    if mode == MODE_LOG_REPLAY_EGO:
        ego_states = scenario.ego_log.states[t_start : t_end + 1]
    else:
        if len(ego_plan) < horizon + 1:
            raise RolloutError(
                f"ego_plan has {len(ego_plan)} states, needs at least {horizon + 1}"
            )
        reference = ego_plan.segment(0, horizon)
        start = ego_start if ego_start is not None else scenario.ego_log[t_start]
        ego_states = lqr_track(reference, start, lqr, lim.wheelbase, lim).states

    # --- agents
    ordered = sorted(scenario.agents, key=lambda a: a.id)
    tracks: dict[str, list[VehicleState]] = {}
    if mode in (MODE_NONREACTIVE, MODE_LOG_REPLAY_EGO):
        for a in ordered:
            tracks[a.id] = list(a.states[t_start : t_end + 1])
    else:
        extents = {a.id: a.length for a in ordered}
        kinds = {a.id: a.kind for a in ordered}
        current: dict[str, VehicleState] = {}
        for a in ordered:
            init = agent_init.get(a.id) if agent_init else None
            current[a.id] = init if init is not None else a.states[t_start]
            tracks[a.id] = [current[a.id]]

        for k in range(horizon):
            snapshot: dict[str, tuple[VehicleState, float]] = {
                "ego": (ego_states[k], DEFAULT_EGO_LENGTH)
            }
            for aid, st in current.items():
                snapshot[aid] = (st, extents[aid])

            nxt: dict[str, VehicleState] = {}
            for a in ordered:
                st = current[a.id]
                if kinds[a.id] == "static":
                    nxt[a.id] = st
                    continue
                lane = scenario.map.lanes[assign_lane(st.pose.x, st.pose.y, scenario.map)]
                ops = lane_centerline_ops(lane)
                s_self, _, _ = ops.project(st.pose.x, st.pose.y)

                # leader: nearest in-corridor entity ahead along this lane
                leader = None
                best_ds = math.inf
                for other_id in sorted(snapshot.keys()):
                    if other_id == a.id:
                        continue
                    other, other_len = snapshot[other_id]
                    s_o, lat_o, _ = ops.project(other.pose.x, other.pose.y)
                    if abs(lat_o) > 0.5 * lane.width:
                        continue
                    ds = s_o - s_self
                    if ds <= 0.0 or ds > LEADER_LOOKAHEAD or ds >= best_ds:
                        continue
                    best_ds = ds
                    leader = (other.vel_lon, ds - 0.5 * extents[a.id] - 0.5 * other_len)
                if leader is not None and leader[1] <= 0.0:
                    leader = (leader[0], 0.01)  # overlapping bumpers: force hard braking

                accel = idm_accel(st.vel_lon, leader, idm, b_hard)
                wheelbase = 0.6 * a.length
                tx, ty, _ = ops.point_at(s_self + PURE_PURSUIT_LOOKAHEAD)
                alpha = wrap_angle(
                    math.atan2(ty - st.pose.y, tx - st.pose.x) - st.pose.theta
                )
                steering = math.atan2(
                    2.0 * wheelbase * math.sin(alpha), PURE_PURSUIT_LOOKAHEAD
                )
                steering = max(-DEFAULT_STEER_MAX, min(DEFAULT_STEER_MAX, steering))
                nxt[a.id] = _agent_step(st, accel, steering, scenario.dt, wheelbase)
            current = nxt
            for aid, st in current.items():
                tracks[aid].append(st)

    return SceneStates(
        dt=scenario.dt,
        t_start=t_start,
        t_end=t_end,
        ego=tuple(ego_states),
        agents={aid: tuple(st) for aid, st in tracks.items()},
    )
