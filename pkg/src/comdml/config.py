"""Experiment configuration: strict YAML schema and builders for runtime objects."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Discriminator, Field, Tag, field_validator
from pydantic import ValidationError as PydanticValidationError

from comdml.core import AgentProfile
from comdml.errors import ParseError, ValidationError
from comdml.profiler import PRESETS, LayerSpec, ModelSpec
from comdml.simulator import (
    BASE_RATE,
    LINK_TIERS_MBPS,
    MBPS,
    METHODS,
    SPEED_TIERS_CPU,
    AllReduceModel,
    ChurnPolicy,
    Topology,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AgentsConfig(_Strict):
    count: int = Field(10, ge=1)
    speeds_cpu: list[float] = Field(default_factory=lambda: list(SPEED_TIERS_CPU), min_length=1)
    # round_robin: agent i gets speeds_cpu[i % n]; random: seeded uniform draw
    assignment: Literal["round_robin", "random"] = "round_robin"
    base_rate: float = Field(BASE_RATE, gt=0)
    num_batches: int = Field(50, ge=0)
    batch_size: int = Field(100, ge=1)

    @field_validator("speeds_cpu")
    @classmethod
    def _positive(cls, v):
        if any(not s > 0 for s in v):
            raise ValueError("all speeds must be > 0")
        return v


class LayerConfig(_Strict):
    name: str
    cost: float = Field(ge=0)
    out_bytes: float = Field(0.0, ge=0)
    param_bytes: float = Field(0.0, ge=0)


class ModelConfig(_Strict):
    layers: list[LayerConfig] = Field(min_length=2)
    aux_cost_frac: float = Field(0.0, ge=0, le=0.5)
    aux_out_classes: int = Field(10, ge=1)


class TopologyConfig(_Strict):
    kind: Literal["full", "random", "ring"] = "full"
    p: float = Field(0.2, ge=0, le=1)
    seed: Optional[int] = None
    links_mbps: list[float] = Field(default_factory=lambda: list(LINK_TIERS_MBPS), min_length=1)

    @field_validator("links_mbps")
    @classmethod
    def _positive(cls, v):
        if any(not s > 0 for s in v):
            raise ValueError("link speeds must be > 0 (disconnection is expressed by the topology)")
        return v


class ChurnConfig(_Strict):
    fraction: float = Field(0.0, ge=0, le=1)
    period_rounds: int = Field(100, ge=1)
    seed: Optional[int] = None


class AggregationConfig(_Strict):
    algorithm: Literal["halving_doubling", "ring"] = "halving_doubling"
    latency_s: float = Field(0.0, ge=0)
    # None: parameter bytes of the configured model
    model_bytes: Optional[float] = Field(None, gt=0)


class FlagsConfig(_Strict):
    partial_model_transfer: bool = False
    uniform_average: bool = False
    improvement_threshold: float = Field(0.0, ge=0, lt=1)
    label_bytes: float = Field(0.0, ge=0)


class LearningConfig(_Strict):
    samples: int = Field(4000, ge=1)
    dim: int = Field(16, ge=1)
    num_classes: int = Field(2, ge=2)
    separation: float = 2.0
    hidden: list[int] = Field(default_factory=lambda: [32, 32, 16], min_length=1)
    label_skew: Optional[float] = Field(None, gt=0)
    lr0: float = Field(0.001, gt=0)
    decay_factor: float = Field(0.2, gt=0, le=1)
    plateau_rounds: int = Field(10, ge=1)
    # None: use the top-level rounds
    rounds: Optional[int] = Field(None, ge=0)
    drift_bins: int = Field(32, ge=1)
    plan_source: Literal["comdml", "no_offload"] = "comdml"


ModelField = Annotated[
    Union[
        Annotated[Literal["resnet56-like"], Tag("preset")],
        Annotated[ModelConfig, Tag("custom")],
    ],
    Discriminator(lambda v: "preset" if isinstance(v, str) else "custom"),
]


class ExperimentConfig(_Strict):
    seed: int = Field(ge=0)
    mode: Literal["timing", "learning", "both"] = "timing"
    rounds: int = Field(200, ge=1)
    sample_rate: float = Field(1.0, gt=0, le=1)
    compare: list[str] = Field(default_factory=lambda: ["comdml"], min_length=1)
    agents: AgentsConfig = AgentsConfig()
    model: ModelField = "resnet56-like"
    topology: TopologyConfig = TopologyConfig()
    churn: ChurnConfig = ChurnConfig()
    aggregation: AggregationConfig = AggregationConfig()
    flags: FlagsConfig = FlagsConfig()
    learning: LearningConfig = LearningConfig()

    @field_validator("compare")
    @classmethod
    def _known_methods(cls, v):
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected any of {list(METHODS)}")
        if len(set(v)) != len(v):
            raise ValueError("duplicate methods")
        return v


def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc if p not in ("preset", "custom"))


def validate_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("<root>", "config must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except PydanticValidationError as e:
        err = e.errors()[0]
        raise ValidationError(_field_path(err["loc"]) or "<root>", err["msg"]) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror or e}") from None
    return parse_config(text, str(path))


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(e, "problem", None) or str(e)
        raise ParseError(f"{source}:{where}: {problem}") from None
    return validate_config(raw if raw is not None else {})


def preset_names() -> list[str]:
    files = resources.files("comdml").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml"))


def load_preset(name: str) -> ExperimentConfig:
    ref = resources.files("comdml").joinpath("presets", f"{name}.yaml")
    if not ref.is_file():
        raise ParseError(f"no preset named {name!r}; available: {preset_names()}")
    return parse_config(ref.read_text(encoding="utf-8"), f"preset:{name}")


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply CLI overrides (dotted keys use '__'), re-validating the result."""
    raw = cfg.model_dump()
    for key, value in changes.items():
        if value is None:
            continue
        node = raw
        *parents, leaf = key.split("__")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return validate_config(raw)


# builders


def build_model(cfg: ExperimentConfig) -> ModelSpec:
    if isinstance(cfg.model, str):
        return PRESETS[cfg.model]()
    return ModelSpec(
        layers=tuple(LayerSpec(**layer.model_dump()) for layer in cfg.model.layers),
        aux_cost_frac=cfg.model.aux_cost_frac,
        aux_out_classes=cfg.model.aux_out_classes,
    )


def agent_speeds(cfg: ExperimentConfig) -> list[float]:
    """Per-agent batches/s of the full model."""
    a = cfg.agents
    if a.assignment == "round_robin":
        cpus = [a.speeds_cpu[i % len(a.speeds_cpu)] for i in range(a.count)]
    else:
        rng = np.random.default_rng([cfg.seed, 31])
        cpus = [a.speeds_cpu[int(k)] for k in rng.integers(len(a.speeds_cpu), size=a.count)]
    return [c * a.base_rate for c in cpus]


def speed_tiers(cfg: ExperimentConfig) -> list[float]:
    return sorted({c * cfg.agents.base_rate for c in cfg.agents.speeds_cpu})


def build_agents(cfg: ExperimentConfig, num_batches: list[int] | None = None) -> list[AgentProfile]:
    speeds = agent_speeds(cfg)
    if num_batches is None:
        num_batches = [cfg.agents.num_batches] * cfg.agents.count
    return [
        AgentProfile(id=i, proc_speed=p, num_batches=n, dataset_size=n * cfg.agents.batch_size)
        for i, (p, n) in enumerate(zip(speeds, num_batches))
    ]


def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg.topology
    return Topology(
        kind=t.kind,
        p=t.p,
        seed=cfg.seed if t.seed is None else t.seed,
        bandwidths=tuple(m * MBPS for m in t.links_mbps),
    )


def build_churn(cfg: ExperimentConfig) -> ChurnPolicy:
    c = cfg.churn
    return ChurnPolicy(fraction=c.fraction, period_rounds=c.period_rounds, seed=cfg.seed if c.seed is None else c.seed)


def build_aggregation(cfg: ExperimentConfig, model: ModelSpec) -> AllReduceModel:
    a = cfg.aggregation
    b = a.model_bytes if a.model_bytes is not None else model.param_bytes
    if not b > 0:
        raise ValidationError("aggregation.model_bytes", "model declares no parameter bytes; set it explicitly")
    return AllReduceModel(algorithm=a.algorithm, latency_s=a.latency_s, model_bytes=b)
