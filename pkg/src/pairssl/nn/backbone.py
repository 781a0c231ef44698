"""Desk-scale convolutional classifier.

Inputs in [0, 1] are standardised with a fixed ``(x - input_mean) / input_std``.
Each stage is conv3x3(pad 1) -> relu -> 2x2 max-pool; the stages feed one
hidden dense layer and a linear head producing ``num_classes`` logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .. import ndtensor as nt
from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    in_shape: tuple[int, int, int] = (1, 32, 32)
    filters: tuple[int, ...] = (16, 32)
    hidden: int = 64
    num_classes: int = 4
    input_mean: float = 0.5
    input_std: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(v) for v in self.in_shape))
        object.__setattr__(self, "filters", tuple(int(v) for v in self.filters))
        if len(self.in_shape) != 3 or min(self.in_shape) < 1:
            raise ConfigError(f"in_shape must be three positive ints, got {self.in_shape}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.hidden < 1 or not self.filters or min(self.filters) < 1:
            raise ConfigError("hidden width and filter counts must be positive")
        if not self.input_std > 0:
            raise ConfigError(f"input_std must be positive, got {self.input_std}")
        _, h, w = self.in_shape
        scale = 2 ** len(self.filters)
        if h % scale or w % scale:
            raise ConfigError(f"image size {h}x{w} not divisible by {scale} for {len(self.filters)} pooling stages")

    @property
    def flat_features(self) -> int:
        _, h, w = self.in_shape
        scale = 2 ** len(self.filters)
        return self.filters[-1] * (h // scale) * (w // scale)


@dataclass
class ParamSet:
    """Named parameter arrays, in a fixed order."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.arrays.items()})

    def track(self, tape: nt.Tape) -> dict[str, nt.Tensor]:
        return {k: tape.watch(v, name=k) for k, v in self.arrays.items()}

    def constants(self) -> dict[str, nt.Tensor]:
        return {k: nt.Tensor(v) for k, v in self.arrays.items()}

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.arrays.items()}


def init_params(cfg: BackboneConfig, rng: np.random.Generator) -> ParamSet:
    """He-normal weights for relu layers, zero head (uniform initial predictions), zero biases."""
    arrays: dict[str, np.ndarray] = {}
    cin = cfg.in_shape[0]
    for i, f in enumerate(cfg.filters):
        fan_in = cin * 9
        arrays[f"conv{i}.w"] = rng.standard_normal((f, cin, 3, 3)) * np.sqrt(2.0 / fan_in)
        arrays[f"conv{i}.b"] = np.zeros(f)
        cin = f
    arrays["fc.w"] = rng.standard_normal((cfg.flat_features, cfg.hidden)) * np.sqrt(2.0 / cfg.flat_features)
    arrays["fc.b"] = np.zeros(cfg.hidden)
    arrays["head.w"] = np.zeros((cfg.hidden, cfg.num_classes))
    arrays["head.b"] = np.zeros(cfg.num_classes)
    return ParamSet(arrays)


def forward(
    params: Union[ParamSet, Mapping[str, nt.Tensor]],
    cfg: BackboneConfig,
    images: Union[nt.Tensor, np.ndarray],
) -> nt.Tensor:
    """Pre-softmax logits ``[N, num_classes]`` for a batch ``[N, C, H, W]``."""
    if isinstance(params, ParamSet):
        params = params.constants()
    x = nt.as_tensor(images)
    if x.ndim != 4 or tuple(x.shape[1:]) != cfg.in_shape:
        raise ShapeError(f"expected images of shape N×{cfg.in_shape}, got {x.shape}")
    x = nt.mul(nt.sub(x, cfg.input_mean), 1.0 / cfg.input_std)
    for i in range(len(cfg.filters)):
        x = nt.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=1, pad=1)
        x = nt.maxpool2x2(nt.relu(x))
    x = nt.relu(nt.dense(nt.flatten(x), params["fc.w"], params["fc.b"]))
    return nt.dense(x, params["head.w"], params["head.b"])


def predict_proba(params: ParamSet, cfg: BackboneConfig, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Softmax probabilities without recording a tape, evaluated in chunks."""
    consts = params.constants()
    out = [
        nt.softmax(forward(consts, cfg, images[i : i + chunk])).data
        for i in range(0, len(images), chunk)
    ]
    return np.concatenate(out, axis=0) if out else np.zeros((0, cfg.num_classes))
