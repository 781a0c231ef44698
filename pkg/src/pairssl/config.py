"""Training configuration, presets and resolution from file + flag overrides."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .augment import StrongPolicy, WeakPolicy, policy_from_dict, policy_to_dict
from .data import SplitSpec
from .errors import ConfigError
from .nn import BackboneConfig
from .sslcore import LossWeights, Thresholds


@dataclass(frozen=True)
class TrainConfig:
    # algorithm
    batch_size: int = 64
    k_weak: int = 7
    k_strong: int = 1
    temperature: float = 0.5
    tau_c: float = 0.95
    tau_s: float = 0.9
    lambda_u: float = 75.0
    lambda_p: float = 75.0
    ema_decay: float = 0.999
    # optimisation
    optimizer: str = "sgd"
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_schedule: str = "cosine"
    lr_decay_rate: float = 7 * math.pi / 16
    # loop
    total_steps: int = 1000
    eval_every: int = 50
    diag_window: int = 100
    seed: int = 0
    # data
    dataset: str = "toy"
    data_dir: Optional[str] = None
    data_seed: Optional[int] = None
    num_classes: int = 4
    image_size: int = 32
    n_per_class: int = 600
    test_per_class: int = 200
    labels_per_class: int = 5
    validation_size: int = 200
    unlabeled_size: Optional[int] = 2000
    # backbone
    filters: tuple[int, ...] = (16, 32)
    hidden: int = 64
    input_mean: float = 0.5
    input_std: float = 0.25
    # augmentation
    weak_aug: WeakPolicy = field(default_factory=WeakPolicy)
    strong_aug: StrongPolicy = field(default_factory=StrongPolicy)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if isinstance(self.weak_aug, Mapping):
            object.__setattr__(self, "weak_aug", policy_from_dict({"kind": "weak", **self.weak_aug}))
        if isinstance(self.strong_aug, Mapping):
            object.__setattr__(self, "strong_aug", policy_from_dict({"kind": "strong_fixed", **self.strong_aug}))
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "k_weak", "k_strong", "eval_every", "diag_window", "labels_per_class", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.dataset not in ("toy", "cifar10"):
            raise ConfigError(f"dataset must be 'toy' or 'cifar10', got {self.dataset!r}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be nonnegative")
        Thresholds(self.tau_c, self.tau_s)
        LossWeights(self.lambda_u, self.lambda_p)
        if self.dataset == "toy":
            need = self.labels_per_class * self.num_classes + self.validation_size + (self.unlabeled_size or 0)
            if need > self.n_per_class * self.num_classes:
                raise ConfigError(
                    f"split needs {need} samples but toy dataset has {self.n_per_class * self.num_classes}"
                )
        self.backbone  # validates shapes

    # derived views
    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.tau_c, self.tau_s)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_u, self.lambda_p)

    @property
    def channels(self) -> int:
        return 3 if self.dataset == "cifar10" else 1

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            (self.channels, self.image_size, self.image_size),
            self.filters,
            self.hidden,
            self.num_classes,
            self.input_mean,
            self.input_std,
        )

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.labels_per_class, self.validation_size, self.resolved_data_seed, self.unlabeled_size)

    @property
    def resolved_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (WeakPolicy, StrongPolicy)):
                v = {k: x for k, x in policy_to_dict(v).items() if k != "kind"}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = _coerce(f.name, d[f.name], getattr(_DEFAULT, f.name))
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def _coerce(name: str, value: Any, default: Any) -> Any:
    """Check/convert ``value`` against the type of the field's default."""
    if isinstance(default, (WeakPolicy, StrongPolicy)):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{name} must be a mapping")
        merged = {k: x for k, x in policy_to_dict(default).items() if k != "kind"}
        unknown = sorted(set(value) - set(merged))
        if unknown:
            raise ConfigError(f"unknown {name} keys: {', '.join(unknown)}")
        merged.update(value)
        return merged
    if value is None:
        if name in ("data_dir", "data_seed", "unlabeled_size"):
            return None
        raise ConfigError(f"{name} may not be null")
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int) or name in ("data_seed", "unlabeled_size"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            if isinstance(value, str):
                return int(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v]
            return tuple(int(v) for v in value)
        if isinstance(default, str) or name == "data_dir":
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot use {value!r} (expected {type(default).__name__})") from None
    return value


_DEFAULT = TrainConfig()


# Desk-scale preset used by the acceptance runs. Chosen empirically for a
# 600-step CPU budget: a small backbone, a fast EMA, K=2 and unlabeled weights
# of 10 (weights of 75 diverge at this scale).
PRESETS: dict[str, dict[str, Any]] = {
    "toy": {
        "dataset": "toy",
        "num_classes": 4,
        "image_size": 32,
        "n_per_class": 600,
        "test_per_class": 200,
        "labels_per_class": 5,
        "validation_size": 200,
        "unlabeled_size": 2000,
        "batch_size": 16,
        "k_weak": 2,
        "k_strong": 1,
        "temperature": 0.5,
        "tau_c": 0.95,
        "tau_s": 0.9,
        "lambda_u": 10.0,
        "lambda_p": 10.0,
        "ema_decay": 0.99,
        "optimizer": "sgd",
        "lr": 0.03,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "lr_schedule": "cosine",
        "total_steps": 600,
        "eval_every": 25,
        "diag_window": 100,
        "filters": [8, 16],
        "hidden": 32,
        "input_mean": 0.25,
        "input_std": 0.25,
    },
    "cifar10": {
        "dataset": "cifar10",
        "num_classes": 10,
        "image_size": 32,
        "labels_per_class": 100,
        "validation_size": 5000,
        "unlabeled_size": None,
        "batch_size": 64,
        "k_weak": 7,
        "k_strong": 1,
        "lambda_u": 75.0,
        "lambda_p": 75.0,
        "ema_decay": 0.999,
        "optimizer": "sgd",
        "lr": 0.03,
        "weight_decay": 0.0005,
        "lr_schedule": "cosine",
        "total_steps": 20000,
        "eval_every": 500,
    },
}


def load_config_file(path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _deep_merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _deep_merge(dict(out[k]), v)
        else:
            out[k] = v
    return out


def resolve_config(
    preset: Optional[str] = None,
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> TrainConfig:
    """Preset, then file, then flag overrides; later layers win key by key."""
    merged: dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        merged = dict(PRESETS[preset])
    file_values = dict(file_values or {})
    file_preset = file_values.pop("preset", None)
    if file_preset is not None and preset is None:
        merged = _deep_merge(resolve_config(file_preset).to_dict(), {})
    merged = _deep_merge(merged, file_values)
    merged = _deep_merge(merged, dict(overrides or {}))
    return TrainConfig.from_dict(merged)


def parse_config(path=None, preset: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    values = load_config_file(path) if path is not None else {}
    return resolve_config(preset, values, overrides)


def set_nested(d: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
    cur[keys[-1]] = value


__all__ = ["PRESETS", "TrainConfig", "load_config_file", "parse_config", "resolve_config", "set_nested", "asdict"]
