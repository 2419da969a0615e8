"""Run configuration: nested dataclasses with strict JSON loading.

Every field has a default. Unknown keys are rejected with the dotted path of
the offending field, since a silently ignored typo in a hyperparameter name
is the easiest way to ruin a reproduction.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    k: int = 3
    d: int = 20
    n: int = 1500
    separation: float = 3.0
    seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    path: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    standardize: bool = True


@dataclass(frozen=True)
class EncoderConfig:
    trunk: tuple = (-1, 500, 300, 80)
    z_dim: int = 16
    nu_y: float = 1.0
    nu_z: float = 1.0
    beta: float = 1.0
    norm_mode: str = "none"
    loss: str = "scl"  # "scl" or "infonce"


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    time_dim: int = 32
    mid_dim: int = 128
    n_blocks: int = 4
    norm_mode: str = "instance"
    full_sum: bool = False
    # B-stage optimizer overrides; None falls back to the trainer's values
    learning_rate: float | None = None
    batch_size: int | None = None


@dataclass(frozen=True)
class AugmentConfig:
    kind: str = "gaussian"  # gaussian | mixup | mask
    sigma: float = 0.1
    mix_low: float = 0.5
    mix_high: float = 1.0
    mask_fraction: float = 0.2


@dataclass(frozen=True)
class TrainerConfig:
    stages: tuple = (("A", 50), ("B", 100), ("A", 100))
    lam: float = 0.1
    batch_size: int = 256
    positives_per_center: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    use_diffusion: bool = True
    checkpoint_every: int = 0
    wall_clock: bool = False


@dataclass(frozen=True)
class EvalConfig:
    probe_kind: str = "logistic"
    probe_seed: int = 0
    space: str = "z"
    train_fraction: float = 0.9
    kmeans_restarts: int = 20


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def to_dict(self):
        return _to_plain(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _dataclass_of(tp):
    """The dataclass inside ``X`` or ``X | None``, if any."""
    if dataclasses.is_dataclass(tp):
        return tp
    for arg in typing.get_args(tp):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def _coerce(value, tp, path):
    if value is None:
        if type(None) in typing.get_args(tp):
            return None
        raise ConfigError("null is not allowed here", path)
    sub = _dataclass_of(tp)
    if sub is not None:
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object, got {type(value).__name__}", path)
        return from_dict(sub, value, path)
    base = [a for a in typing.get_args(tp) if a is not type(None)] or [tp]
    base = base[0]
    if base is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", path)
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def from_dict(cls, data: dict, path=""):
    """Build ``cls`` from a (partial) dict, filling defaults and rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    for key, value in data.items():
        sub_path = f"{path}.{key}" if path else key
        kwargs[key] = _coerce(value, hints[key], sub_path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(RunConfig, raw)


def validate(cfg: RunConfig) -> RunConfig:
    """Range checks that need more than a type. Raises ConfigError with the field path."""
    t, e, d = cfg.trainer, cfg.encoder, cfg.diffusion
    checks = [
        (0.0 <= t.lam <= 1.0, "trainer.lam", "must lie in [0, 1]"),
        (t.batch_size >= 2, "trainer.batch_size", "must be >= 2"),
        (1 <= t.positives_per_center < t.batch_size, "trainer.positives_per_center", "must be in [1, batch_size)"),
        (t.learning_rate >= 0, "trainer.learning_rate", "must be >= 0"),
        (t.augment.kind in ("gaussian", "mixup", "mask"), "trainer.augment.kind", "unknown augmentation"),
        (len(t.stages) >= 1, "trainer.stages", "need at least one stage"),
        (0.0 <= e.beta <= 1.0, "encoder.beta", "must lie in [0, 1]"),
        (e.nu_y > 0 and e.nu_z > 0, "encoder.nu_y", "degrees of freedom must be positive"),
        (e.loss in ("scl", "infonce"), "encoder.loss", "must be 'scl' or 'infonce'"),
        (e.z_dim >= 1, "encoder.z_dim", "must be >= 1"),
        (d.T >= 1, "diffusion.T", "must be >= 1"),
        (0 < d.beta_start <= d.beta_end < 1, "diffusion.beta_start", "need 0 < beta_start <= beta_end < 1"),
        (d.time_dim >= 2 and d.time_dim % 2 == 0, "diffusion.time_dim", "must be even"),
        (d.learning_rate is None or d.learning_rate >= 0, "diffusion.learning_rate", "must be >= 0"),
        (d.batch_size is None or d.batch_size >= 1, "diffusion.batch_size", "must be >= 1"),
        (cfg.eval.space in ("y", "z"), "eval.space", "must be 'y' or 'z'"),
        (cfg.eval.probe_kind in ("logistic", "hinge"), "eval.probe_kind", "must be 'logistic' or 'hinge'"),
        (0 < cfg.eval.train_fraction < 1, "eval.train_fraction", "must lie in (0, 1)"),
        (cfg.data.path is not None or cfg.data.synthetic is not None, "data", "need a path or a synthetic spec"),
    ]
    for ok, path, msg in checks:
        if not ok:
            raise ConfigError(msg, path)
    for i, stage in enumerate(t.stages):
        if len(stage) != 2 or stage[0] not in ("A", "B", "AB") or not isinstance(stage[1], int) or stage[1] < 1:
            raise ConfigError("each stage is [kind, epochs] with kind A, B or AB and epochs >= 1", f"trainer.stages.{i}")
    if t.stages[0][0] == "B":
        raise ConfigError("the first stage must train the encoder (A or AB)", "trainer.stages.0")
    return cfg
