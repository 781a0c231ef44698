"""Minimal dense tensors with a reverse-mode tape."""

from .ops import (
    add,
    conv2d,
    dense,
    flatten,
    log,
    matmul,
    maxpool2x2,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    sqrt,
    sub,
    sum,
)
from .tensor import Gradients, Tape, Tensor, as_tensor, backward, record

__all__ = [
    "Gradients",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "conv2d",
    "dense",
    "flatten",
    "log",
    "matmul",
    "maxpool2x2",
    "mean",
    "mul",
    "record",
    "relu",
    "reshape",
    "softmax",
    "sqrt",
    "sub",
    "sum",
]
