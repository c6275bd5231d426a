"""Run configuration: nested dataclasses, JSON loading, dotted overrides.

Unknown keys are rejected on load so typos fail fast, and the full
config is echoed into every checkpoint and report for provenance.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .lifting import LIFT_MODES
from .losses import LossWeights


@dataclass
class ModelConfig:
    n_points: int = 2048
    d: int = 512
    d_h: int = 2048
    seq_len: int = 32
    cont_width: int = 256
    n_scales: int = 3
    stage_points: list = field(default_factory=list)  # empty -> n/4, n/16, n/64
    radii: list = field(default_factory=lambda: [0.1, 0.2, 0.4])
    k_max: list = field(default_factory=lambda: [32, 32, 32])
    include_bottleneck_scale: bool = True
    n_affordances: int = 2

    def resolved_stage_points(self) -> list:
        if self.stage_points:
            return list(self.stage_points)
        return [self.n_points // 4, self.n_points // 16, self.n_points // 64]


@dataclass
class FusionConfig:
    stage1: bool = True
    stage2: bool = True
    n_heads: int = 1
    residual: bool = False


@dataclass
class LiftingConfig:
    mode: str = "multi"
    share_weights: bool = False
    coarse_to_fine: bool = True


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    schedule: str = "linear"
    epochs: int = 30
    batch_size: int = 8
    grad_accum: int = 1


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    lifting: LiftingConfig = field(default_factory=LiftingConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    checkpoint_every: int = 0  # optimizer steps between checkpoints; 0 = final only

    def validate(self):
        m = self.model
        if m.d < 2:
            raise ConfigError("model.d must be at least 2")
        if m.d % self.fusion.n_heads != 0:
            raise ConfigError(
                f"model.d={m.d} not divisible by fusion.n_heads={self.fusion.n_heads}")
        if m.n_scales != 3:
            raise ConfigError("the backbone is three-stage; model.n_scales must be 3")
        stages = m.resolved_stage_points()
        if len(stages) != 3 or any(a <= b for a, b in zip(stages, stages[1:])):
            raise ConfigError(f"stage points must be 3 strictly decreasing: {stages}")
        if stages[0] > m.n_points:
            raise ConfigError(
                f"first stage ({stages[0]}) exceeds n_points ({m.n_points})")
        if m.seq_len < 2:
            raise ConfigError("model.seq_len must be at least 2")
        if m.n_affordances < 2:
            raise ConfigError("model.n_affordances must be at least 2")
        if self.lifting.mode not in LIFT_MODES:
            raise ConfigError(f"lifting.mode must be one of {LIFT_MODES}")
        o = self.optimizer
        if o.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        if o.schedule not in ("linear", "constant"):
            raise ConfigError("optimizer.schedule must be 'linear' or 'constant'")
        if min(o.epochs, o.batch_size, o.grad_accum) < 1:
            raise ConfigError("epochs, batch_size, and grad_accum must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "fusion": FusionConfig,
    "lifting": LiftingConfig,
    "losses": LossWeights,
    "optimizer": OptimConfig,
}


def _build_section(cls, payload: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config key(s) under {path}: {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad values under {path}: {exc}") from exc


def config_from_dict(payload: dict) -> RunConfig:
    payload = dict(payload)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = payload.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name)
    scalars = {"seed", "checkpoint_every"}
    unknown = set(payload) - scalars
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    for key in scalars & set(payload):
        kwargs[key] = payload[key]
    return RunConfig(**kwargs).validate()


def load_config(path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(payload)


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Apply 'section.key=value' strings; values parse as JSON when possible."""
    payload = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = payload
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config path {dotted!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(payload)
