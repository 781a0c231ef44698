"""The closed set of differentiable primitives used by the backbone and losses.

Broadcasting is limited to scalars and row/column vectors against a matrix.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor, record


def _check_broadcast(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    for small, big in ((a, b), (b, a)):
        if int(np.prod(small)) == 1 and len(small) <= len(big):
            return big
        if len(big) == 2 and (small == (big[1],) or small == (1, big[1]) or small == (big[0], 1)):
            return big
    raise ShapeError(f"cannot broadcast shapes {a} and {b} (only row/column vectors are supported)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return record(ad * bd, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return record(ad @ bd, (a, b), back)


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``w[F,C,kh,kw]``, zero padded."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    for size, k in ((h, kh), (wd, kw)):
        span = size + 2 * pad - k
        if span < 0 or span % stride:
            raise ConfigError(f"kernel {k} stride {stride} pad {pad} gives non-integral output for size {size}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wm = w.data.reshape(f, -1)
    out = cols @ wm.T
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (f,):
            raise ShapeError(f"conv2d bias shape {b.shape} does not match {f} filters")
        out = out + b.data
        parents.append(b)
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    x_shape = x.shape
    need_x = x.requires_grad

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, f)
        dw = (gm.T @ cols).reshape(w.shape)
        dx = kernels.col2im(gm @ wm, x_shape, kh, kw, stride, pad) if need_x else None
        grads = [dx, dw]
        if b is not None:
            grads.append(gm.sum(axis=0))
        return grads

    return record(out, parents, back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def maxpool2x2(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects N×C×H×W, got {x.shape}")
    out, arg = kernels.maxpool2x2_forward(x.data)
    shape = x.shape
    return record(out, (x,), lambda g: (kernels.maxpool2x2_backward(g, arg, shape),))


def softmax(logits) -> Tensor:
    """Row-wise softmax over the last axis of a 2-D tensor."""
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ShapeError(f"softmax expects a 2-D batch, got {z.shape}")
    e = np.exp(z.data - z.data.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return record(p, (z,), back)


def log(x, eps: float = 1e-12) -> Tensor:
    """``log(max(x, eps))``; the clamp has zero slope."""
    x = as_tensor(x)
    live = x.data > eps
    safe = np.where(live, x.data, eps)
    return record(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


def sqrt(x, eps: float = 1e-12) -> Tensor:
    """``sqrt(max(x, 0))``; slope evaluated at ``max(x, eps)`` to stay finite at 0."""
    x = as_tensor(x)
    y = np.sqrt(np.maximum(x.data, 0.0))
    denom = 2.0 * np.sqrt(np.maximum(x.data, eps))
    return record(y, (x,), lambda g: (g / denom,))


def sum(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.asarray(out), (x,), back)


def mean(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def dense(x, w, b=None) -> Tensor:
    """Affine layer ``x @ w + b`` with ``w`` shaped (in, out)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y
