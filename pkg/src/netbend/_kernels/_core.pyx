# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: im2col/col2im packing, disc morphology, bilinear warp.

Semantics match ``_fallback.py`` exactly; see that module for the contracts.
Loop bounds are computed analytically so the hot loops stay branch-free and
auto-vectorizable; accumulation orders stay aligned with the fallback.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport floor

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _lo(Py_ssize_t k, Py_ssize_t pad, Py_ssize_t stride) nogil:
    # smallest o with o*stride + k - pad >= 0
    if k >= pad:
        return 0
    return (pad - k + stride - 1) // stride


cdef inline Py_ssize_t _hi(Py_ssize_t k, Py_ssize_t pad, Py_ssize_t stride,
                           Py_ssize_t extent, Py_ssize_t limit) nogil:
    # one past the largest o with o*stride + k - pad < extent, capped at limit
    cdef Py_ssize_t h = (extent - 1 - k + pad) // stride + 1
    if h > limit:
        h = limit
    if h < 0:
        h = 0
    return h


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if real is float:
        out_arr = np.zeros((n, c * kh * kw, oh * ow), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c * kh * kw, oh * ow), dtype=np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j, oy, ox, row, oy_lo, oy_hi, ox_lo, ox_hi, base, iy, ix0
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(kh):
                    oy_lo = _lo(i, pad, stride)
                    oy_hi = _hi(i, pad, stride, h, oh)
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        ox_lo = _lo(j, pad, stride)
                        ox_hi = _hi(j, pad, stride, w, ow)
                        for oy in range(oy_lo, oy_hi):
                            iy = oy * stride + i - pad
                            base = oy * ow
                            ix0 = j - pad
                            for ox in range(ox_lo, ox_hi):
                                out[b, row, base + ox] = x[b, ci, iy, ox * stride + ix0]
    return out_arr


def col2im(real[:, :, ::1] col, int c, int h, int w, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = col.shape[0]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if real is float:
        out_arr = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j, oy, ox, row, oy_lo, oy_hi, ox_lo, ox_hi, base, iy, ix0
    with nogil:
        # kernel-offset-major order matches the fallback's slice-add loop
        for i in range(kh):
            oy_lo = _lo(i, pad, stride)
            oy_hi = _hi(i, pad, stride, h, oh)
            for j in range(kw):
                ox_lo = _lo(j, pad, stride)
                ox_hi = _hi(j, pad, stride, w, ow)
                for b in range(n):
                    for ci in range(c):
                        row = (ci * kh + i) * kw + j
                        for oy in range(oy_lo, oy_hi):
                            iy = oy * stride + i - pad
                            base = oy * ow
                            ix0 = j - pad
                            for ox in range(ox_lo, ox_hi):
                                out[b, ci, iy, ox * stride + ix0] += col[b, row, base + ox]
    return out_arr


def disc_offsets(int r):
    return [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dy * dy + dx * dx <= r * r
    ]


def _morph(real[:, ::1] m, int r, bint take_max):
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((h, w), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    if r == 0:
        out_arr[...] = np.asarray(m)
        return out_arr
    # edge-replicated padding once, then branch-free folds over each offset
    padded_arr = np.pad(np.asarray(m), r, mode="edge")
    cdef real[:, ::1] padded = padded_arr
    offs = disc_offsets(r)
    cdef cnp.int64_t[::1] dys = np.array([o[0] for o in offs], dtype=np.int64)
    cdef cnp.int64_t[::1] dxs = np.array([o[1] for o in offs], dtype=np.int64)
    cdef Py_ssize_t noff = dys.shape[0], y, x, k, sy, sx
    cdef real v
    with nogil:
        for y in range(h):
            for x in range(w):
                out[y, x] = m[y, x]
        for k in range(noff):
            sy = r + dys[k]
            sx = r + dxs[k]
            for y in range(h):
                if take_max:
                    for x in range(w):
                        v = padded[sy + y, sx + x]
                        if v > out[y, x]:
                            out[y, x] = v
                else:
                    for x in range(w):
                        v = padded[sy + y, sx + x]
                        if v < out[y, x]:
                            out[y, x] = v
    return out_arr


def erode(real[:, ::1] m, int r):
    return _morph(m, r, False)


def dilate(real[:, ::1] m, int r):
    return _morph(m, r, True)


def warp_bilinear(real[:, ::1] m, double[::1] inv):
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    cdef double a = inv[0], b = inv[1], c = inv[2], d = inv[3], e = inv[4], f = inv[5]
    if real is float:
        out_arr = np.empty((h, w), dtype=np.float32)
    else:
        out_arr = np.empty((h, w), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, x0, y0
    cdef double sx, sy, fx, fy, v00, v01, v10, v11
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = a * x + b * y + c
                sy = d * x + e * y + f
                fx = sx - floor(sx)
                fy = sy - floor(sy)
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                if fx == 0.0 and fy == 0.0:
                    # exact grid hit: direct copy keeps permutations bit-exact
                    if 0 <= y0 < h and 0 <= x0 < w:
                        out[y, x] = m[y0, x0]
                    else:
                        out[y, x] = <real>0.0
                    continue
                v00 = m[y0, x0] if (0 <= y0 < h and 0 <= x0 < w) else 0.0
                v01 = m[y0, x0 + 1] if (0 <= y0 < h and 0 <= x0 + 1 < w) else 0.0
                v10 = m[y0 + 1, x0] if (0 <= y0 + 1 < h and 0 <= x0 < w) else 0.0
                v11 = m[y0 + 1, x0 + 1] if (0 <= y0 + 1 < h and 0 <= x0 + 1 < w) else 0.0
                out[y, x] = <real>(
                    (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy)
                    + (v10 * (1.0 - fx) + v11 * fx) * fy
                )
    return out_arr
