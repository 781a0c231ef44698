"""Optimizers and the learning-rate schedule.

Both optimizers use decoupled weight decay: parameters are first shrunk by
``(1 - lr * weight_decay)`` and then moved by the gradient-based step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ConfigError
from .backbone import ParamSet

DEFAULT_DECAY_RATE = 7 * math.pi / 16


@dataclass
class OptimizerState:
    kind: str = "sgd"  # "sgd" (Nesterov) or "adamw"
    lr: float = 0.03
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")


def init_optimizer(params: ParamSet, kind: str = "sgd", **settings) -> OptimizerState:
    state = OptimizerState(kind=kind, **settings)
    names = ("momentum",) if kind == "sgd" else ("m", "v")
    state.buffers = {b: {k: np.zeros_like(v) for k, v in params.items()} for b in names}
    return state


def _check_grads(params: ParamSet, grads: Mapping[str, np.ndarray]) -> None:
    missing = [k for k in params if k not in grads]
    if missing:
        raise ValueError(f"missing gradient for parameters: {', '.join(missing)}")
    for k, v in params.items():
        if grads[k].shape != v.shape:
            raise ValueError(f"gradient for {k} has shape {grads[k].shape}, expected {v.shape}")


def sgd_nesterov_step(
    state: OptimizerState, params: ParamSet, grads: Mapping[str, np.ndarray], lr: float
) -> tuple[ParamSet, OptimizerState]:
    """One Nesterov step.

    With velocity ``v``: ``v <- mu*v + g`` and ``theta <- theta*(1 - lr*wd) - lr*(g + mu*v)``.
    """
    _check_grads(params, grads)
    mu, wd = state.momentum, state.weight_decay
    vel = state.buffers["momentum"]
    new_params, new_vel = {}, {}
    for k, theta in params.items():
        g = grads[k]
        v = mu * vel[k] + g
        new_vel[k] = v
        new_params[k] = theta * (1.0 - lr * wd) - lr * (g + mu * v)
    new_state = OptimizerState(**{**state.__dict__, "step": state.step + 1, "buffers": {"momentum": new_vel}})
    return ParamSet(new_params), new_state


def decoupled_adam_step(
    state: OptimizerState, params: ParamSet, grads: Mapping[str, np.ndarray], lr: float
) -> tuple[ParamSet, OptimizerState]:
    _check_grads(params, grads)
    b1, b2, eps, wd = state.beta1, state.beta2, state.eps, state.weight_decay
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    m_old, v_old = state.buffers["m"], state.buffers["v"]
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        m = b1 * m_old[k] + (1.0 - b1) * g
        v = b2 * v_old[k] + (1.0 - b2) * g * g
        new_m[k], new_v[k] = m, v
        new_params[k] = theta * (1.0 - lr * wd) - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    new_state = OptimizerState(**{**state.__dict__, "step": t, "buffers": {"m": new_m, "v": new_v}})
    return ParamSet(new_params), new_state


def optimizer_step(state, params, grads, lr):
    if state.kind == "sgd":
        return sgd_nesterov_step(state, params, grads, lr)
    return decoupled_adam_step(state, params, grads, lr)


def cosine_lr(step: int, total_steps: int, base_lr: float, decay_rate: float = DEFAULT_DECAY_RATE) -> float:
    """``base_lr * cos(decay_rate * step / total_steps)``."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base_lr
    return base_lr * math.cos(decay_rate * step / total_steps)
