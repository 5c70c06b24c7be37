"""Deterministic transform layers applied to single activation maps.

Each activation map is treated as a 1-channel image. Pointwise kinds act on
individual values; affine kinds warp the map by inverse mapping with
bilinear sampling and zero padding; morphological kinds take the
neighborhood min/max over a disc with replicated edges.

Reflection, scale and rotation act about the map center (the matrices are
conjugated by a translation to the center); translation is used as-is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

POINTWISE_KINDS = ("ablate", "invert", "scalar_multiply", "binary_threshold")
AFFINE_KINDS = ("reflect", "translate", "scale", "rotate")
MORPH_KINDS = ("erode", "dilate")

# kind -> (param names, human-readable param description)
PARAM_SPEC = {
    "ablate": ((), ""),
    "invert": ((), ""),
    "scalar_multiply": (("p",), "scale factor"),
    "binary_threshold": (("t",), "threshold"),
    "reflect": (("axis",), "'horizontal' or 'vertical'"),
    "translate": (("p_x", "p_y"), "pixel offsets"),
    "scale": (("k_x", "k_y"), "scale factors > 0"),
    "rotate": (("theta",), "angle in degrees"),
    "erode": (("r",), "disc radius >= 0"),
    "dilate": (("r",), "disc radius >= 0"),
}

KINDS = tuple(PARAM_SPEC)


class TransformError(ValueError):
    """Unknown kind or invalid parameters for a transform."""


@dataclass(frozen=True)
class Transform:
    """One configured transform: a kind plus its parameter tuple."""

    kind: str
    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in PARAM_SPEC:
            raise TransformError(
                f"unknown transform {self.kind!r}; expected one of {', '.join(KINDS)}"
            )
        names, _ = PARAM_SPEC[self.kind]
        object.__setattr__(self, "params", tuple(self.params))
        if len(self.params) != len(names):
            raise TransformError(
                f"{self.kind} expects {len(names)} param{'s' if len(names) != 1 else ''}"
                f" ({', '.join(names) or 'none'}), got {len(self.params)}"
            )
        if self.kind == "reflect":
            if self.params[0] not in ("horizontal", "vertical"):
                raise TransformError(
                    f"reflect axis must be 'horizontal' or 'vertical', got {self.params[0]!r}"
                )
        elif self.kind in MORPH_KINDS:
            r = self.params[0]
            if not (isinstance(r, (int, np.integer)) and not isinstance(r, bool)) or r < 0:
                raise TransformError(f"{self.kind} radius must be a non-negative integer, got {r!r}")
        else:
            for name, value in zip(names, self.params):
                if not isinstance(value, (int, float, np.floating, np.integer)) or isinstance(
                    value, bool
                ):
                    raise TransformError(f"{self.kind} param {name} must be a number, got {value!r}")
                if not math.isfinite(float(value)):
                    raise TransformError(f"{self.kind} param {name} must be finite")
            if self.kind == "scale" and (self.params[0] <= 0 or self.params[1] <= 0):
                raise TransformError(f"scale factors must be > 0, got {self.params}")


@dataclass(frozen=True)
class Hook:
    """A transform bound to one generator layer and a resolved feature set."""

    layer: int
    features: tuple[int, ...]
    transform: Transform


def pointwise(m: np.ndarray, kind: str, params: tuple = ()) -> np.ndarray:
    """ablate: 0; invert: 1-x; scalar_multiply: x*p; binary_threshold: x>=t."""
    if kind == "ablate":
        return np.zeros_like(m)
    if kind == "invert":
        return np.asarray(1.0, dtype=m.dtype) - m
    if kind == "scalar_multiply":
        return m * np.asarray(params[0], dtype=m.dtype)
    if kind == "binary_threshold":
        return (m >= params[0]).astype(m.dtype)
    raise TransformError(f"{kind!r} is not a pointwise transform")


def _center_conjugate(mat: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    to_center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    return back @ mat @ to_center


def build_affine(kind: str, params: tuple, shape: tuple[int, int]) -> np.ndarray:
    """3x3 forward transform matrix for (x, y, 1) column coordinates.

    Reflections, scaling and rotation are recentered to act about the map
    center; translation is not.
    """
    if kind == "reflect":
        axis = params[0]
        mat = np.diag([-1.0, 1.0, 1.0]) if axis == "horizontal" else np.diag([1.0, -1.0, 1.0])
        return _center_conjugate(mat, shape)
    if kind == "translate":
        px, py = float(params[0]), float(params[1])
        return np.array([[1.0, 0.0, px], [0.0, 1.0, py], [0.0, 0.0, 1.0]])
    if kind == "scale":
        kx, ky = float(params[0]), float(params[1])
        if kx == 0.0 or ky == 0.0:
            raise TransformError("scale factor must be nonzero")
        return _center_conjugate(np.diag([kx, ky, 1.0]), shape)
    if kind == "rotate":
        th = math.radians(float(params[0]))
        mat = np.array(
            [
                [math.cos(th), -math.sin(th), 0.0],
                [math.sin(th), math.cos(th), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        return _center_conjugate(mat, shape)
    raise TransformError(f"{kind!r} is not an affine transform")


def warp_affine(m: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Warp a 2-D map by the forward matrix ``mat`` (inverse mapping inside)."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (3, 3):
        raise TransformError(f"affine matrix must be 3x3, got {mat.shape}")
    det = np.linalg.det(mat)
    if abs(det) < 1e-12:
        raise TransformError("affine matrix is singular")
    inv = np.linalg.inv(mat)
    return _kernels.warp_bilinear(m, inv[:2].reshape(6))


def morph(m: np.ndarray, kind: str, r: int) -> np.ndarray:
    """Grayscale erosion/dilation with a disc of radius ``r``; r=0 is identity."""
    if r < 0:
        raise TransformError(f"radius must be >= 0, got {r}")
    if kind == "erode":
        return _kernels.erode(m, int(r))
    if kind == "dilate":
        return _kernels.dilate(m, int(r))
    raise TransformError(f"{kind!r} is not a morphological transform")


def apply_map(m: np.ndarray, t: Transform) -> np.ndarray:
    """Apply one transform to a single [H,W] map, returning a new array."""
    if t.kind in POINTWISE_KINDS:
        return pointwise(m, t.kind, t.params)
    if t.kind in AFFINE_KINDS:
        return warp_affine(m, build_affine(t.kind, t.params, m.shape))
    return morph(m, t.kind, t.params[0])


def apply_to_features(activations: np.ndarray, selected, t: Transform) -> np.ndarray:
    """Transform the selected feature maps of an [F,H,W] stack.

    Unselected maps are carried over bit-identically; the input itself is
    never mutated.
    """
    f = activations.shape[0]
    indices = sorted(set(int(i) for i in selected))
    for i in indices:
        if not 0 <= i < f:
            raise IndexError(f"feature index {i} out of range for {f} features")
    out = activations.copy()
    for i in indices:
        out[i] = apply_map(activations[i], t)
    return out
