"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy twins in
``_kernels_py`` take over. :func:`use_backend` switches at runtime, which the
benchmark and the backend-parity tests rely on.
"""

import logging
from types import ModuleType

from . import _kernels_py

logger = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
    logger.debug("compiled kernels unavailable, using numpy fallback")

_NAMES = (
    "im2col",
    "col2im",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "warp_bilinear",
    "filter3x3_reflect",
)

_active: ModuleType = _compiled if _compiled is not None else _kernels_py


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def backend() -> str:
    return _active.BACKEND


def use_backend(name: str) -> None:
    global _active
    if name == "python":
        _active = _kernels_py
    elif name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels were not built; reinstall with a C compiler")
        _active = _compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def im2col(x, kh, kw, stride, pad):
    return _active.im2col(x, kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _active.col2im(cols, x_shape, kh, kw, stride, pad)


def maxpool2x2_forward(x):
    return _active.maxpool2x2_forward(x)


def maxpool2x2_backward(grad, arg, x_shape):
    return _active.maxpool2x2_backward(grad, arg, x_shape)


def warp_bilinear(images, mats, border=False):
    return _active.warp_bilinear(images, mats, bool(border))


def filter3x3_reflect(images, weights):
    return _active.filter3x3_reflect(images, weights)
