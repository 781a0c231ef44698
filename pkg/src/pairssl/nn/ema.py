from __future__ import annotations

from dataclasses import dataclass

from ..errors import ShapeError
from .backbone import ParamSet


@dataclass
class EmaShadow:
    """Exponential moving average of the parameters, one array per name."""

    decay: float
    params: ParamSet

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1], got {self.decay}")

    @classmethod
    def from_params(cls, params: ParamSet, decay: float) -> "EmaShadow":
        return cls(decay, params.copy())


def ema_update(shadow: EmaShadow, params: ParamSet) -> EmaShadow:
    """``shadow <- decay*shadow + (1 - decay)*params`` elementwise."""
    if shadow.params.shapes() != params.shapes():
        raise ShapeError("EMA shadow and parameters differ in names or shapes")
    d = shadow.decay
    arrays = {k: d * s + (1.0 - d) * params[k] for k, s in shadow.params.items()}
    return EmaShadow(d, ParamSet(arrays))

