"""Two-stage generation pipeline: perturb, roll out, demonstrate, filter, export.

Each sample runs two simulations of one horizon each: the perturbation stage
moves the ego to an out-of-distribution state, the expert stage demonstrates
how to continue from it. Camera poses are stubbed from the ego track (no
rendering). Everything is deterministic in (corpus, config, master seed),
including under process-level parallelism.
"""

from __future__ import annotations

import csv
import io
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .config import CameraConfig, PipelineConfig, config_hash
from .errors import ValidationError
from .expert import (
    EXPERT_PLANNER,
    EXPERT_RECOVERY,
    expert_filter,
    privileged_plan,
    recovery_retrieve,
    recovery_target,
)
from .geometry import local_to_global, wrap_angle
from .metrics import RewardRecord, aggregate_epdms, compute_submetrics
from .reactive import MODE_NONREACTIVE, MODE_REACTIVE, SceneStates, rollout
from .scenario import (
    FRAME_GLOBAL,
    Pose2D,
    Scenario,
    Trajectory,
    corpus_id_collisions,
    dump_json_canonical,
    _state_to_json,
)
from .seeding import mix64
from .vocab import (
    STATUS_ACCEPTED,
    STATUS_CLEARED_NONREACTIVE,
    STATUS_CLEARED_REACTIVE,
    STATUS_PENDING,
    PerturbationCandidate,
    Vocabulary,
    default_vocabulary,
    enumerate_perturbations,
    feasibility_filter,
    grid_sparsify,
    place_at_state,
)

REJECT_BUCKETS = ("collision", "offroad", "reward", "kinematics")


@dataclass(frozen=True, slots=True)
class CameraPoseTrack:
    id: str
    poses: tuple[Pose2D, ...]
    intrinsics: Mapping


@dataclass(frozen=True, slots=True)
class SensorPoseTrack:
    cameras: tuple[CameraPoseTrack, ...]

    @property
    def frame_count(self) -> int:
        return len(self.cameras[0].poses) if self.cameras else 0


@dataclass(frozen=True, slots=True)
class SimSample:
    scenario_id: str
    round: int
    expert_kind: str
    perturbed_history: Trajectory
    expert_future: Trajectory
    states: SceneStates
    reward: RewardRecord
    sensors: SensorPoseTrack
    seed: int
    candidate_index: int

    def __post_init__(self):
        a = self.perturbed_history.states[-1].pose
        b = self.expert_future.states[0].pose
        if math.hypot(a.x - b.x, a.y - b.y) > 0.05:
            raise ValidationError("history and future are not contiguous at the handoff frame")


@dataclass(frozen=True, slots=True)
class RoundStats:
    round: int
    expert_kind: str
    attempted: int
    accepted: int
    cumulative_accepted: int
    rejects: Mapping[str, int]


def sensor_stub(states: SceneStates, camera_rig: Sequence[CameraConfig]) -> SensorPoseTrack:
    """Compose each camera's fixed ego-to-camera transform with the ego track."""
    if not camera_rig:
        raise ValidationError("camera rig must not be empty")
    cams = []
    for cam in camera_rig:
        poses = []
        for s in states.ego:
            x, y = local_to_global(cam.dx, cam.dy, s.pose.x, s.pose.y, s.pose.theta)
            poses.append(Pose2D(x, y, wrap_angle(s.pose.theta + cam.dyaw)))
        cams.append(CameraPoseTrack(cam.id, tuple(poses), cam.intrinsics))
    return SensorPoseTrack(tuple(cams))


# ---------------------------------------------------------------------------
# Candidate preparation


def cleared_status(config: PipelineConfig) -> str:
    return STATUS_CLEARED_REACTIVE if config.reactive else STATUS_CLEARED_NONREACTIVE


def prepare_candidates(
    scenario: Scenario, vocab: Vocabulary, config: PipelineConfig
) -> list[PerturbationCandidate]:
    """Threshold, grid-sparsify and feasibility-check the full vocabulary.

    The cheap non-reactive pass always runs first; reactive checks run only
    on its survivors and only in reactive runs.
    """
    cands = enumerate_perturbations(scenario, vocab, config.perturb)
    cands = grid_sparsify(cands, config.grid, mix64(config.master_seed, scenario.id))
    out = []
    for c in cands:
        if c.status == STATUS_PENDING:
            c = feasibility_filter(
                c,
                scenario,
                "nonreactive",
                config.perturb.epdms_min,
                config.weights,
                config.metric_thresholds,
                config.idm,
                config.lqr,
                config.limits,
            )
            if config.reactive and c.status == STATUS_CLEARED_NONREACTIVE:
                c = feasibility_filter(
                    c,
                    scenario,
                    "reactive",
                    config.perturb.epdms_min,
                    config.weights,
                    config.metric_thresholds,
                    config.idm,
                    config.lqr,
                    config.limits,
                )
        out.append(c)
    return out


# ---------------------------------------------------------------------------
# Single-sample simulation


def sample_seed(master_seed: int, scenario_id: str, round_idx: int, candidate_index: int) -> int:
    """Documented per-sample seed: splitmix64 mixing of the four identifiers."""
    return mix64(master_seed, scenario_id, round_idx, candidate_index)


def _reject_bucket(reason: str) -> str:
    if reason in ("nc", "collision"):
        return "collision"
    if reason in ("dac", "off-road"):
        return "offroad"
    if reason == "kinematics":
        return "kinematics"
    return "reward"


def _simulate(
    scenario: Scenario,
    cand: PerturbationCandidate,
    expert_kind: str,
    config: PipelineConfig,
    vocab: Vocabulary,
    round_idx: int,
) -> tuple[SimSample | None, str]:
    mode = MODE_REACTIVE if config.reactive else MODE_NONREACTIVE
    anchor = scenario.anchor_frame
    H = scenario.t_horizon
    dt = scenario.dt
    ego_extent = (config.ego_length, config.ego_width)

    if cand.status not in (cleared_status(config), STATUS_ACCEPTED):
        # reuse of the stage-1 feasibility contract: un-cleared candidates
        # are re-screened and rejected rather than trusted
        c = cand
        if c.status == STATUS_PENDING:
            c = feasibility_filter(
                c, scenario, "nonreactive", config.perturb.epdms_min,
                config.weights, config.metric_thresholds, config.idm, config.lqr, config.limits,
            )
        if config.reactive and c.status == STATUS_CLEARED_NONREACTIVE:
            c = feasibility_filter(
                c, scenario, "reactive", config.perturb.epdms_min,
                config.weights, config.metric_thresholds, config.idm, config.lqr, config.limits,
            )
        if c.status != cleared_status(config):
            return None, c.reason or "reward"
        cand = c

    # stage 1: perturbation rollout
    states1 = rollout(
        scenario, cand.trajectory, anchor, H, mode,
        idm=config.idm, lqr=config.lqr, limits=config.limits, b_hard=config.b_hard,
    )
    perturbed = states1.ego[-1]
    agent_finals = {aid: track[-1] for aid, track in states1.agents.items()}
    history = scenario.ego_log.segment(0, anchor)
    combined1 = Trajectory(dt=dt, states=history.states + states1.ego[1:], frame=FRAME_GLOBAL)
    sub1 = compute_submetrics(states1, scenario, combined1, config.metric_thresholds, ego_extent)
    epdms1 = aggregate_epdms(sub1, config.weights)

    # stage 2: pseudo-expert demonstration from the perturbed state
    anchor2 = anchor + H
    logged_end = scenario.ego_log[anchor2 + H]
    if expert_kind == EXPERT_RECOVERY:
        entry = recovery_retrieve(recovery_target(perturbed, logged_end), vocab)
        plan2 = place_at_state(entry, perturbed)
    elif expert_kind == EXPERT_PLANNER:
        plan2 = privileged_plan(
            scenario, anchor2, config.planner,
            ego_start=perturbed, agent_init=agent_finals,
            idm=config.idm, lqr=config.lqr, limits=config.limits,
            thresholds=config.metric_thresholds,
        )
    else:
        raise ValidationError(f"unknown expert kind '{expert_kind}'")

    states2 = rollout(
        scenario, plan2, anchor2, H, mode,
        idm=config.idm, lqr=config.lqr, limits=config.limits, b_hard=config.b_hard,
        ego_start=perturbed, agent_init=agent_finals,
    )
    executed2 = Trajectory(dt=dt, states=states2.ego, frame=FRAME_GLOBAL)
    sub2 = compute_submetrics(states2, scenario, executed2, config.metric_thresholds, ego_extent)
    accepted, reason = expert_filter(
        states2, scenario, executed2, config.expert_filter,
        config.metric_thresholds, config.limits, precomputed=sub2,
    )
    if not accepted:
        return None, reason
    epdms2 = aggregate_epdms(sub2, config.weights)

    ego_comb = states1.ego + states2.ego[1:]
    agents_comb = {
        aid: states1.agents[aid] + states2.agents[aid][1:] for aid in states1.agents
    }
    states_comb = SceneStates(
        dt=dt, t_start=anchor, t_end=anchor2 + H, ego=ego_comb, agents=agents_comb
    )
    sample = SimSample(
        scenario_id=scenario.id,
        round=round_idx,
        expert_kind=expert_kind,
        perturbed_history=Trajectory(dt=dt, states=states1.ego, frame=FRAME_GLOBAL),
        expert_future=executed2,
        states=states_comb,
        reward=RewardRecord(submetrics=sub2, epdms=epdms2, stage_scores=(epdms1, epdms2)),
        sensors=sensor_stub(states_comb, config.cameras),
        seed=sample_seed(config.master_seed, scenario.id, round_idx, cand.vocab_index),
        candidate_index=cand.vocab_index,
    )
    return sample, ""


def simulate_sample(
    scenario: Scenario,
    cand: PerturbationCandidate,
    expert_kind: str,
    config: PipelineConfig,
    vocab: Vocabulary,
    round_idx: int = 0,
) -> SimSample | None:
    """Run the two-stage simulation for one cleared candidate.

    Returns None when the expert-stage filter rejects the demonstration (or
    when an un-cleared candidate fails the re-screened stage-1 feasibility).
    """
    sample, _ = _simulate(scenario, cand, expert_kind, config, vocab, round_idx)
    return sample


# ---------------------------------------------------------------------------
# Corpus-level generation

_WORKER_STATE: dict = {}


def _worker_init(vocab: Vocabulary, config: PipelineConfig, rounds: int) -> None:
    _WORKER_STATE["vocab"] = vocab
    _WORKER_STATE["config"] = config
    _WORKER_STATE["rounds"] = rounds


def _round_draws(
    n_cleared: int, rounds: int, per_round: int | None, master_seed: int, scenario_id: str
) -> list[list[int]]:
    """Disjoint per-round index draws into the cleared-candidate list."""
    order = list(range(n_cleared))
    random.Random(mix64(master_seed, scenario_id, "round-draw")).shuffle(order)
    size = per_round if per_round is not None else math.ceil(n_cleared / rounds)
    return [order[r * size : (r + 1) * size] for r in range(rounds)]


def _process_scenario_impl(
    scenario: Scenario, vocab: Vocabulary, config: PipelineConfig, rounds: int
) -> list[tuple[int, int, SimSample | None, str]]:
    cands = prepare_candidates(scenario, vocab, config)
    cleared = [c for c in cands if c.status == cleared_status(config)]
    cleared.sort(key=lambda c: c.vocab_index)
    draws = _round_draws(
        len(cleared), rounds, config.per_round, config.master_seed, scenario.id
    )
    results = []
    for r, indices in enumerate(draws):
        for i in sorted(indices):
            cand = cleared[i]
            sample, reason = _simulate(scenario, cand, config.expert_kind, config, vocab, r)
            results.append((r, cand.vocab_index, sample, reason))
    return results


def _process_scenario(scenario: Scenario):
    return _process_scenario_impl(
        scenario, _WORKER_STATE["vocab"], _WORKER_STATE["config"], _WORKER_STATE["rounds"]
    )


def run_generation(
    corpus: Sequence[Scenario],
    config: PipelineConfig,
    rounds: int | None = None,
    vocab: Vocabulary | None = None,
    workers: int = 1,
) -> tuple[list[SimSample], list[RoundStats]]:
    """Generate a dataset over a corpus with disjoint per-round draws.

    No candidate is reused across rounds. Output ordering and content are
    independent of `workers`; the merge is done in (scenario id, round,
    candidate index) order and per-sample seeds depend only on identifiers.
    """
    if not corpus:
        raise ValidationError("corpus is empty")
    rounds = rounds if rounds is not None else config.rounds
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    dups = corpus_id_collisions(corpus)
    if dups:
        raise ValidationError(f"duplicate scenario id in corpus: {dups[0]}")
    if vocab is None:
        vocab = default_vocabulary(
            seed=config.master_seed,
            horizon=corpus[0].t_horizon,
            dt=corpus[0].dt,
            size=config.vocab_size,
            source_count=config.vocab_source_count,
        )

    ordered = sorted(corpus, key=lambda s: s.id)
    if workers <= 1:
        per_scenario = [_process_scenario_impl(s, vocab, config, rounds) for s in ordered]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=(vocab, config, rounds)
        ) as pool:
            per_scenario = list(pool.map(_process_scenario, ordered))

    samples: list[SimSample] = []
    attempted = [0] * rounds
    accepted = [0] * rounds
    rejects = [{b: 0 for b in REJECT_BUCKETS} for _ in range(rounds)]
    for scenario_results in per_scenario:
        for r, _cand_idx, sample, reason in scenario_results:
            attempted[r] += 1
            if sample is not None:
                accepted[r] += 1
                samples.append(sample)
            else:
                rejects[r][_reject_bucket(reason)] += 1

    samples.sort(key=lambda s: (s.scenario_id, s.round, s.candidate_index))
    stats = []
    cumulative = 0
    for r in range(rounds):
        cumulative += accepted[r]
        stats.append(
            RoundStats(
                round=r,
                expert_kind=config.expert_kind,
                attempted=attempted[r],
                accepted=accepted[r],
                cumulative_accepted=cumulative,
                rejects=dict(rejects[r]),
            )
        )
    return samples, stats


# ---------------------------------------------------------------------------
# Export


def sample_to_dict(sample: SimSample) -> dict:
    return {
        "scenario_id": sample.scenario_id,
        "round": sample.round,
        "expert_kind": sample.expert_kind,
        "seed": sample.seed,
        "candidate_index": sample.candidate_index,
        "history": [_state_to_json(s) for s in sample.perturbed_history.states],
        "expert_future": [_state_to_json(s) for s in sample.expert_future.states],
        "agents_sim": [
            {"id": aid, "states": [_state_to_json(s) for s in track]}
            for aid, track in sorted(sample.states.agents.items())
        ],
        "reward": sample.reward.as_dict(),
        "sensors": {
            "cameras": [
                {
                    "id": cam.id,
                    "poses": [[p.x, p.y, p.theta] for p in cam.poses],
                    "intrinsics": dict(cam.intrinsics),
                }
                for cam in sample.sensors.cameras
            ]
        },
    }


def stats_csv_text(stats: Sequence[RoundStats]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "round",
            "expert_kind",
            "attempted",
            "accepted",
            "cumulative_accepted",
            "reject_collision",
            "reject_offroad",
            "reject_reward",
            "reject_kinematics",
        ]
    )
    for row in stats:
        writer.writerow(
            [
                row.round,
                row.expert_kind,
                row.attempted,
                row.accepted,
                row.cumulative_accepted,
                row.rejects.get("collision", 0),
                row.rejects.get("offroad", 0),
                row.rejects.get("reward", 0),
                row.rejects.get("kinematics", 0),
            ]
        )
    return buf.getvalue()


def export_dataset(
    samples: Sequence[SimSample],
    path: str | Path,
    stats: Sequence[RoundStats] = (),
    config: PipelineConfig | None = None,
    corpus_ids: Sequence[str] = (),
    fmt: str = "jsonl",
) -> list[Path]:
    """Write dataset.jsonl, stats.csv and manifest.json into a directory.

    Re-exporting the same inputs produces byte-identical files.
    """
    if fmt != "jsonl":
        raise ValidationError(f"unsupported export format '{fmt}'")

    # the expert-filter guarantee is re-asserted at the export boundary
    ep_min = config.expert_filter.ep_min if config is not None else 0.5
    for s in samples:
        sub = s.reward.submetrics
        if not (sub.nc == sub.dac == sub.ddc == sub.tlc == 1.0 and sub.ep > ep_min):
            raise ValidationError(
                f"sample {s.scenario_id}/{s.candidate_index} violates the export safety guarantee"
            )

    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset_path = out_dir / "dataset.jsonl"
    lines = [dump_json_canonical(sample_to_dict(s)) for s in samples]
    dataset_path.write_text("".join(lines), encoding="utf-8")

    stats_path = out_dir / "stats.csv"
    stats_path.write_text(stats_csv_text(stats), encoding="utf-8")

    manifest_path = out_dir / "manifest.json"
    manifest = {
        "config_hash": config_hash(config) if config is not None else "",
        "tool_version": __version__,
        "master_seed": config.master_seed if config is not None else 0,
        "reactive": config.reactive if config is not None else True,
        "expert_kind": config.expert_kind if config is not None else "",
        "corpus_ids": sorted(corpus_ids),
    }
    manifest_path.write_text(dump_json_canonical(manifest), encoding="utf-8")
    return [dataset_path, stats_path, manifest_path]
