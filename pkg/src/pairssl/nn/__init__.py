"""Backbone, optimizers, learning-rate schedule, parameter EMA and checkpoints."""

from .backbone import BackboneConfig, ParamSet, forward, init_params, predict_proba
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .ema import EmaShadow, ema_update
from .optim import (
    DEFAULT_DECAY_RATE,
    OptimizerState,
    cosine_lr,
    decoupled_adam_step,
    init_optimizer,
    optimizer_step,
    sgd_nesterov_step,
)

__all__ = [
    "BackboneConfig",
    "Checkpoint",
    "DEFAULT_DECAY_RATE",
    "EmaShadow",
    "OptimizerState",
    "ParamSet",
    "cosine_lr",
    "decoupled_adam_step",
    "ema_update",
    "forward",
    "init_optimizer",
    "init_params",
    "load_checkpoint",
    "optimizer_step",
    "predict_proba",
    "save_checkpoint",
    "sgd_nesterov_step",
]
