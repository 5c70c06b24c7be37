"""Hot-kernel backend selection.

Prefers the compiled Cython core, falling back to the pure-numpy
implementations when the extension is missing or when
``NETBEND_PURE_PYTHON=1`` is set. Both backends share the same contracts;
``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("NETBEND_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

disc_offsets = _fallback.disc_offsets


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(np.ascontiguousarray(x), kh, kw, stride, pad)


def col2im(col, c, h, w, kh, kw, stride, pad):
    return _impl.col2im(np.ascontiguousarray(col), c, h, w, kh, kw, stride, pad)


def erode(m, r):
    return _impl.erode(np.ascontiguousarray(m), r)


def dilate(m, r):
    return _impl.dilate(np.ascontiguousarray(m), r)


def warp_bilinear(m, inv):
    inv = np.ascontiguousarray(inv, dtype=np.float64).reshape(6)
    return _impl.warp_bilinear(np.ascontiguousarray(m), inv)


def backends():
    """All importable backends, for tests and the comparison benchmark."""
    found = {"python": _fallback}
    try:
        from . import _core

        found["compiled"] = _core
    except ImportError:
        pass
    return found
