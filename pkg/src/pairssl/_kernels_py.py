"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
the same floating-point accumulation order, so both backends agree to the last
bit on the machines we test on.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def _out_size(size, k, stride, pad):
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv window {k} with stride {stride} and pad {pad} does not tile size {size}"
        )
    return span // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x[N,C,H,W]`` into rows of receptive fields, shape ``(N*Ho*Wo, C*kh*kw)``."""
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add rows back onto the image grid."""
    n, c, h, w = x_shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 max-pool needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(grad, arg, x_shape):
    n, c, h, w = x_shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    out = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(out)


def warp_bilinear(images, mats, border):
    """Resample each image at ``mats[n] @ (col, row, 1)``.

    ``border`` clamps out-of-range taps to the edge; otherwise they read zero.
    """
    n, c, h, w = images.shape
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = mats[:, 0, 0, None, None] * cols + mats[:, 0, 1, None, None] * rows + mats[:, 0, 2, None, None]
    sy = mats[:, 1, 0, None, None] * cols + mats[:, 1, 1, None, None] * rows + mats[:, 1, 2, None, None]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.empty_like(images)
    bidx = np.arange(n)[:, None, None]

    def tap(yy, xx):
        if border:
            yy = np.clip(yy, 0, h - 1)
            xx = np.clip(xx, 0, w - 1)
            return images[bidx, :, yy, xx], None
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = images[bidx, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return vals, ok

    a, ma = tap(y0, x0)
    b, mb = tap(y0, x0 + 1)
    cc, mc = tap(y0 + 1, x0)
    d, md = tap(y0 + 1, x0 + 1)
    if not border:
        a = np.where(ma[..., None], a, 0.0)
        b = np.where(mb[..., None], b, 0.0)
        cc = np.where(mc[..., None], cc, 0.0)
        d = np.where(md[..., None], d, 0.0)
    wx = wx[..., None]
    wy = wy[..., None]
    top = (1.0 - wx) * a + wx * b
    bot = (1.0 - wx) * cc + wx * d
    val = (1.0 - wy) * top + wy * bot
    out[...] = val.transpose(0, 3, 1, 2)
    return out


def filter3x3_reflect(images, weights):
    """Correlate each channel with a 3x3 ``weights`` kernel, reflect-padded."""
    n, c, h, w = images.shape
    p = np.pad(images, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros_like(images)
    for a in range(3):
        for b in range(3):
            out += weights[a, b] * p[:, :, a : a + h, b : b + w]
    return out
