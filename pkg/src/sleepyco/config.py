"""Run configuration: nested dataclasses with full-size defaults and a strict JSON loader."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional

STAGES = ("W", "N1", "N2", "N3", "REM")
N_CLASSES = len(STAGES)


class ConfigError(ValueError):
    """Raised for unknown keys, wrong types and out-of-range values."""


@dataclass
class TransformRange:
    min: float
    max: float
    prob: float = 0.5

    def validate(self, path: str) -> None:
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"{path}.prob must lie in [0, 1], got {self.prob}")
        if self.min > self.max:
            raise ConfigError(f"{path}: min {self.min} exceeds max {self.max}")


@dataclass
class AugmentationConfig:
    """Ranges and firing probabilities of the six augmentation transforms."""

    amplitude_scale: TransformRange = field(default_factory=lambda: TransformRange(0.5, 2.0))
    time_shift: TransformRange = field(default_factory=lambda: TransformRange(-300, 300))
    amplitude_shift: TransformRange = field(default_factory=lambda: TransformRange(-10.0, 10.0))
    zero_mask: TransformRange = field(default_factory=lambda: TransformRange(0, 300))
    gaussian_noise: TransformRange = field(default_factory=lambda: TransformRange(0.0, 0.2))
    band_stop: TransformRange = field(default_factory=lambda: TransformRange(0.5, 30.0))
    band_stop_width: float = 2.0

    def validate(self, path: str = "augmentation") -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, TransformRange):
                value.validate(f"{path}.{f.name}")
        if self.zero_mask.min < 0:
            raise ConfigError(f"{path}.zero_mask.min must be >= 0")
        if self.band_stop_width <= 0:
            raise ConfigError(f"{path}.band_stop_width must be positive")

    def disabled(self) -> "AugmentationConfig":
        """Copy with every firing probability set to zero."""
        out = dataclasses.replace(self)
        for f in dataclasses.fields(out):
            value = getattr(out, f.name)
            if isinstance(value, TransformRange):
                setattr(out, f.name, dataclasses.replace(value, prob=0.0))
        return out


@dataclass
class BackboneConfig:
    block_channels: List[int] = field(default_factory=lambda: [64, 128, 192, 256, 256])
    convs_per_block: int = 2
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    pool: int = 5
    se_reduction: int = 16
    prelu_init: float = 0.25
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self, path: str = "model.backbone") -> None:
        if len(self.block_channels) != 5 or any(c < 1 for c in self.block_channels):
            raise ConfigError(f"{path}.block_channels must list 5 positive widths")
        if self.convs_per_block != 2:
            raise ConfigError(f"{path}.convs_per_block: only 2 is supported")
        for name in ("kernel", "stride", "pool", "se_reduction"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name} must be >= 1")
        if self.padding < 0:
            raise ConfigError(f"{path}.padding must be >= 0")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError(f"{path}.bn_momentum must lie in (0, 1]")

    def reduction_ratio(self, stage: int) -> int:
        """Temporal reduction of block ``stage`` output (pools applied before it)."""
        return self.pool ** (stage - 1)


@dataclass
class ModelConfig:
    L: int = 10
    n_classes: int = N_CLASSES
    d_f: int = 128
    d_m: int = 128
    d_ff: int = 128
    n_heads: int = 8
    n_layers: int = 6
    d_z: int = 128
    proj_hidden: int = 128
    tau: float = 0.07
    dropout: float = 0.1
    taps: List[int] = field(default_factory=lambda: [3, 4, 5])
    attn_activation: str = "tanh"
    pe_exponent: str = "printed"
    crl_feature: str = "c5"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def validate(self, path: str = "model") -> None:
        self.backbone.validate(path + ".backbone")
        for name in ("L", "d_f", "d_m", "d_ff", "n_heads", "n_layers", "d_z", "proj_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name} must be >= 1")
        if self.n_classes != N_CLASSES:
            raise ConfigError(f"{path}.n_classes must be {N_CLASSES}")
        if self.d_m % self.n_heads:
            raise ConfigError(f"{path}.d_m ({self.d_m}) must be divisible by n_heads ({self.n_heads})")
        if self.tau <= 0:
            raise ConfigError(f"{path}.tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"{path}.dropout must lie in [0, 1)")
        if not self.taps or any(t not in (3, 4, 5) for t in self.taps) or len(set(self.taps)) != len(self.taps):
            raise ConfigError(f"{path}.taps must be a non-empty subset of [3, 4, 5]")
        if self.attn_activation not in ("tanh", "relu", "identity"):
            raise ConfigError(f"{path}.attn_activation must be tanh, relu or identity")
        if self.pe_exponent not in ("printed", "paired"):
            raise ConfigError(f"{path}.pe_exponent must be 'printed' or 'paired'")
        if self.crl_feature not in ("c5", "f5"):
            raise ConfigError(f"{path}.crl_feature must be 'c5' or 'f5'")

    @property
    def hop_factor(self) -> int:
        return self.backbone.pool

    def tap_channels(self, stage: int) -> int:
        return self.backbone.block_channels[stage - 1]


@dataclass
class TrainConfig:
    eta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-6
    batch_crl: int = 1024
    batch_mtcl: int = 64
    psi1: int = 50
    psi2: int = 500
    phi: int = 20
    max_iters_crl: int = 0
    max_iters_mtcl: int = 0
    micro_batch: int = 8
    crl_chunk: int = 256
    val_samples_crl: int = 2048
    val_samples_mtcl: int = 1024
    val_seed: int = 7919
    frozen_bn: str = "eval"
    pad_head: str = "repeat"
    skip_crl: bool = False

    def validate(self, path: str = "train") -> None:
        for name in ("eta", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{path}.{name} must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError(f"{path}.weight_decay must be >= 0")
        if self.phi < 0:
            raise ConfigError(f"{path}.phi must be >= 0")
        for name in ("batch_crl", "batch_mtcl", "psi1", "psi2", "micro_batch", "crl_chunk",
                     "val_samples_crl", "val_samples_mtcl"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name} must be >= 1")
        for name in ("max_iters_crl", "max_iters_mtcl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{path}.{name} must be >= 0 (0 = unbounded)")
        if self.frozen_bn not in ("eval", "batch"):
            raise ConfigError(f"{path}.frozen_bn must be 'eval' or 'batch'")
        if self.pad_head not in ("repeat", "skip"):
            raise ConfigError(f"{path}.pad_head must be 'repeat' or 'skip'")


@dataclass
class DataConfig:
    root: str = ""
    format: str = "synth"
    channel: str = ""
    n_subjects: int = 12
    epochs_per_subject: int = 300
    k: int = 10
    n_val: int = 7
    trim_wake: bool = True

    def validate(self, path: str = "data") -> None:
        if self.format not in ("synth", "edf", "raw"):
            raise ConfigError(f"{path}.format must be synth, edf or raw")
        for name in ("n_subjects", "epochs_per_subject", "n_val"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{path}.{name} must be >= 1")
        if self.k < 2:
            raise ConfigError(f"{path}.k must be >= 2")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    out_dir: str = "runs/default"
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.model.validate()
        self.train.validate()
        self.augmentation.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# strict construction from JSON-like dicts


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if dataclasses.is_dataclass(tp):
        if tp is TransformRange and isinstance(value, (list, tuple)):
            if len(value) not in (2, 3):
                raise ConfigError(f"{path}: expected [min, max] or [min, max, prob]")
            value = dict(zip(("min", "max", "prob"), value))
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if origin in (list, List):
        (item_tp,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_coerce(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp}")


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``; unknown keys are errors, missing keys default."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key {where!r}")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        kwargs[key] = _coerce(hints[key], value, where)
    return cls(**kwargs)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    """Turn ``a.b.c=value`` into ``{"a": {"b": {"c": value}}}``; values parse as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    root = node
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return root


def config_from_obj(obj: dict, overrides: Optional[List[str]] = None) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    for item in overrides or []:
        obj = _deep_merge(obj, parse_override(item))
    return from_dict(RunConfig, obj).validate()


def load_config(path=None, overrides: Optional[List[str]] = None) -> RunConfig:
    """Load a JSON config file (or defaults when ``path`` is None) and apply dotted overrides."""
    obj: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_obj(obj, overrides)


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
