"""Pure-numpy kernel implementations.

Mirrors the signatures of the compiled core in ``_core.pyx``. Selected at
import time by ``netbend._kernels`` when the extension is unavailable or
``NETBEND_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import numpy as np


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold [N,C,H,W] into patch columns [N, C*kh*kw, OH*OW]."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, oh * ow)


def col2im(
    col: np.ndarray, c: int, h: int, w: int, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Scatter-add patch columns back to [N,C,H,W]; adjoint of im2col."""
    n = col.shape[0]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    colr = col.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += colr[
                :, :, i, j
            ]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)


def disc_offsets(r: int) -> list[tuple[int, int]]:
    """Offsets of the disc structuring element {(dy,dx): dy^2+dx^2 <= r^2}."""
    return [
        (dy, dx)
        for dy in range(-r, r + 1)
        for dx in range(-r, r + 1)
        if dy * dy + dx * dx <= r * r
    ]


def _morph(m: np.ndarray, r: int, take_max: bool) -> np.ndarray:
    if r == 0:
        return m.copy()
    h, w = m.shape
    padded = np.pad(m, r, mode="edge")
    out = None
    for dy, dx in disc_offsets(r):
        window = padded[r + dy : r + dy + h, r + dx : r + dx + w]
        if out is None:
            out = window.copy()
        elif take_max:
            np.maximum(out, window, out=out)
        else:
            np.minimum(out, window, out=out)
    return out


def erode(m: np.ndarray, r: int) -> np.ndarray:
    """Grayscale erosion: neighborhood min over a disc, edges replicated."""
    return _morph(m, r, take_max=False)


def dilate(m: np.ndarray, r: int) -> np.ndarray:
    """Grayscale dilation: neighborhood max over a disc, edges replicated."""
    return _morph(m, r, take_max=True)


def warp_bilinear(m: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Inverse-mapping warp of a 2-D map with bilinear sampling.

    ``inv`` is the top 2x3 of the inverted transform, flattened to
    (a, b, c, d, e, f): source = (a*x + b*y + c, d*x + e*y + f).
    Samples outside the map read as zero. Hits landing exactly on the
    source grid copy the pixel directly so pure index permutations
    (identity, reflections, integer translations) stay bit-exact.
    """
    h, w = m.shape
    a, b, c, d, e, f = (float(v) for v in inv)
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    sx = a * xs + b * ys + c
    sy = d * xs + e * ys + f
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    md = m.astype(np.float64, copy=False)

    def sample(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        return np.where(inside, md[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    out = (v00 * (1.0 - fx) + v01 * fx) * (1.0 - fy) + (v10 * (1.0 - fx) + v11 * fx) * fy
    on_grid = (fx == 0.0) & (fy == 0.0)
    out = np.where(on_grid, v00, out)
    return out.astype(m.dtype)
