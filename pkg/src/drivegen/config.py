"""One config object for the whole generation pipeline.

Every tunable of every module lives here, serialized as a single JSON file.
The config hash is the SHA-256 of the canonical serialization (sorted keys),
so it is stable under key reordering.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .control import LqrParams, VehicleLimits
from .errors import ConfigError
from .expert import EXPERT_KINDS, ExpertFilterSpec, PlannerParams
from .metrics import MetricThresholds, MetricWeights
from .reactive import IdmParams
from .scenario import DEFAULT_EGO_LENGTH, DEFAULT_EGO_WIDTH, dump_json_canonical
from .vocab import GridSpec, PerturbThresholds


@dataclass(frozen=True)
class CameraConfig:
    id: str
    dx: float
    dy: float
    dyaw: float
    intrinsics: dict = field(default_factory=dict)


def default_camera_rig() -> tuple[CameraConfig, ...]:
    intr = {"fx": 1545.0, "fy": 1545.0, "cx": 1024.0, "cy": 256.0, "width": 2048, "height": 512}
    return (
        CameraConfig("cam_f0", 1.7, 0.0, 0.0, dict(intr)),
        CameraConfig("cam_l0", 1.2, 0.9, 0.96, dict(intr)),
        CameraConfig("cam_r0", 1.2, -0.9, -0.96, dict(intr)),
    )


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    rounds: int = 5
    per_round: int | None = None  # None: ceil(cleared / rounds)
    reactive: bool = True
    expert_kind: str = "recovery"
    two_stage_mode: str = "product"
    ego_length: float = DEFAULT_EGO_LENGTH
    ego_width: float = DEFAULT_EGO_WIDTH
    b_hard: float = 4.0
    vocab_size: int = 1024
    vocab_source_count: int = 16384
    perturb: PerturbThresholds = field(default_factory=PerturbThresholds)
    grid: GridSpec = field(default_factory=GridSpec)
    idm: IdmParams = field(default_factory=IdmParams)
    lqr: LqrParams = field(default_factory=LqrParams)
    limits: VehicleLimits = field(default_factory=VehicleLimits)
    weights: MetricWeights = field(default_factory=MetricWeights)
    metric_thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    expert_filter: ExpertFilterSpec = field(default_factory=ExpertFilterSpec)
    planner: PlannerParams = field(default_factory=PlannerParams)
    cameras: tuple[CameraConfig, ...] = field(default_factory=default_camera_rig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.per_round is not None and self.per_round < 1:
            raise ConfigError("per_round must be >= 1 when set")
        if self.expert_kind not in EXPERT_KINDS:
            raise ConfigError(f"expert_kind must be one of {EXPERT_KINDS}")
        if self.two_stage_mode not in ("product", "mean"):
            raise ConfigError("two_stage_mode must be 'product' or 'mean'")
        if self.ego_length <= 0 or self.ego_width <= 0:
            raise ConfigError("ego extent must be positive")
        if self.vocab_size < 1 or self.vocab_source_count < self.vocab_size:
            raise ConfigError("vocab_source_count must be >= vocab_size >= 1")
        if not (0 <= self.master_seed < 2**64):
            raise ConfigError("master_seed must fit in 64 bits")


_SECTION_TYPES = {
    "perturb": PerturbThresholds,
    "grid": GridSpec,
    "idm": IdmParams,
    "lqr": LqrParams,
    "limits": VehicleLimits,
    "weights": MetricWeights,
    "metric_thresholds": MetricThresholds,
    "expert_filter": ExpertFilterSpec,
    "planner": PlannerParams,
}


def _dataclass_to_dict(obj: Any) -> Any:
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, tuple):
        return [_dataclass_to_dict(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _dataclass_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    return obj


def _build_section(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data.keys()) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key '{sorted(unknown)[0]}'")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if f.name == "required_ones":
            v = frozenset(v)
        elif f.name == "weights" and cls is PlannerParams:
            v = _build_section(MetricWeights, v, f"{where}.weights")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def config_to_dict(config: PipelineConfig) -> dict:
    return _dataclass_to_dict(config)


def config_from_dict(data: dict) -> PipelineConfig:
    allowed = {f.name for f in fields(PipelineConfig)}
    unknown = set(data.keys()) - allowed
    if unknown:
        raise ConfigError(f"config: unknown key '{sorted(unknown)[0]}'")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _build_section(_SECTION_TYPES[name], value, name)
        elif name == "cameras":
            kwargs[name] = tuple(
                _build_section(CameraConfig, cam, f"cameras[{i}]") for i, cam in enumerate(value)
            )
        else:
            kwargs[name] = value
    return PipelineConfig(**kwargs)


def config_hash(config: PipelineConfig) -> str:
    canonical = dump_json_canonical(config_to_dict(config))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> PipelineConfig:
    import json

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON: {e}") from e
    return config_from_dict(data)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(dump_json_canonical(config_to_dict(config)), encoding="utf-8")
