# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``.

Loop orders mirror the numpy versions so accumulation happens in the same
sequence; the backend test-suite checks the two agree.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND = "cython"


cdef Py_ssize_t _out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad) except -1:
    cdef Py_ssize_t span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ValueError(
            f"conv window {k} with stride {stride} and pad {pad} does not tile size {size}"
        )
    return span // stride + 1


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = _out_size(h, kh, stride, pad)
    cdef Py_ssize_t wo = _out_size(w, kw, stride, pad)
    out = np.empty((n * ho * wo, c * kh * kw), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t b, oy, ox, ch, i, j, row, col, yy, xx
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    row = (b * ho + oy) * wo + ox
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            yy = oy * stride + i - pad
                            for j in range(kw):
                                xx = ox * stride + j - pad
                                if 0 <= yy < h and 0 <= xx < w:
                                    ov[row, col] = xv[b, ch, yy, xx]
                                else:
                                    ov[row, col] = 0.0
                                col += 1
    return out


def col2im(cols, x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = _out_size(h, kh, stride, pad)
    cdef Py_ssize_t wo = _out_size(w, kw, stride, pad)
    cdef const double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n * ho * wo, c * kh * kw)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, oy, ox, ch, i, j, yy, xx
    # (i, j) outermost per channel to match the slice-add order of the numpy twin
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        for oy in range(ho):
                            yy = oy * stride + i - pad
                            if yy < 0 or yy >= h:
                                continue
                            for ox in range(wo):
                                xx = ox * stride + j - pad
                                if 0 <= xx < w:
                                    ov[b, ch, yy, xx] += cv[(b * ho + oy) * wo + ox, (ch * kh + i) * kw + j]
    return out


def maxpool2x2_forward(x):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    if h % 2 or w % 2:
        raise ValueError(f"2x2 max-pool needs even spatial dims, got {h}x{w}")
    out = np.empty((n, c, h // 2, w // 2), dtype=np.float64)
    arg = np.empty((n, c, h // 2, w // 2), dtype=np.uint8)
    cdef double[:, :, :, ::1] ov = out
    cdef unsigned char[:, :, :, ::1] av = arg
    cdef Py_ssize_t b, ch, oy, ox, k
    cdef double best, v
    cdef unsigned char bk
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(h // 2):
                    for ox in range(w // 2):
                        best = xv[b, ch, 2 * oy, 2 * ox]
                        bk = 0
                        for k in range(1, 4):
                            v = xv[b, ch, 2 * oy + k // 2, 2 * ox + k % 2]
                            if v > best:
                                best = v
                                bk = <unsigned char>k
                        ov[b, ch, oy, ox] = best
                        av[b, ch, oy, ox] = bk
    return out, arg


def maxpool2x2_backward(grad, arg, x_shape):
    cdef const double[:, :, :, ::1] gv = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const unsigned char[:, :, :, ::1] av = np.ascontiguousarray(arg, dtype=np.uint8)
    out = np.zeros(tuple(x_shape), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, ch, oy, ox, k
    with nogil:
        for b in range(gv.shape[0]):
            for ch in range(gv.shape[1]):
                for oy in range(gv.shape[2]):
                    for ox in range(gv.shape[3]):
                        k = av[b, ch, oy, ox]
                        ov[b, ch, 2 * oy + k // 2, 2 * ox + k % 2] = gv[b, ch, oy, ox]
    return out


cdef inline double _tap(const double[:, :, :, ::1] im, Py_ssize_t b, Py_ssize_t ch,
                        Py_ssize_t y, Py_ssize_t x, Py_ssize_t h, Py_ssize_t w, bint border) noexcept nogil:
    if border:
        if y < 0:
            y = 0
        elif y > h - 1:
            y = h - 1
        if x < 0:
            x = 0
        elif x > w - 1:
            x = w - 1
        return im[b, ch, y, x]
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return im[b, ch, y, x]


def warp_bilinear(images, mats, bint border):
    cdef const double[:, :, :, ::1] im = np.ascontiguousarray(images, dtype=np.float64)
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(mats, dtype=np.float64)
    cdef Py_ssize_t n = im.shape[0], c = im.shape[1], h = im.shape[2], w = im.shape[3]
    out = np.empty((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, ch, r, q, x0, y0
    cdef double sx, sy, fx, fy, wx, wy, top, bot
    with nogil:
        for b in range(n):
            for r in range(h):
                for q in range(w):
                    sx = mv[b, 0, 0] * q + mv[b, 0, 1] * r + mv[b, 0, 2]
                    sy = mv[b, 1, 0] * q + mv[b, 1, 1] * r + mv[b, 1, 2]
                    fx = floor(sx)
                    fy = floor(sy)
                    wx = sx - fx
                    wy = sy - fy
                    x0 = <Py_ssize_t>fx
                    y0 = <Py_ssize_t>fy
                    for ch in range(c):
                        top = (1.0 - wx) * _tap(im, b, ch, y0, x0, h, w, border) + wx * _tap(im, b, ch, y0, x0 + 1, h, w, border)
                        bot = (1.0 - wx) * _tap(im, b, ch, y0 + 1, x0, h, w, border) + wx * _tap(im, b, ch, y0 + 1, x0 + 1, h, w, border)
                        ov[b, ch, r, q] = (1.0 - wy) * top + wy * bot
    return out


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


def filter3x3_reflect(images, weights):
    cdef const double[:, :, :, ::1] im = np.ascontiguousarray(images, dtype=np.float64)
    cdef const double[:, ::1] kv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = im.shape[0], c = im.shape[1], h = im.shape[2], w = im.shape[3]
    out = np.empty((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, ch, r, q, a, d
    cdef double acc
    with nogil:
        for b in range(n):
            for ch in range(c):
                for r in range(h):
                    for q in range(w):
                        acc = 0.0
                        for a in range(3):
                            for d in range(3):
                                acc = acc + kv[a, d] * im[b, ch, _reflect(r + a - 1, h), _reflect(q + d - 1, w)]
                        ov[b, ch, r, q] = acc
    return out
