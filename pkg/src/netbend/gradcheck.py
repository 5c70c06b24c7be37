"""Central-difference gradient oracle for the layer ops.

Projects the op output onto a fixed random direction to get a scalar loss,
then compares the analytic gradient of that loss (via ``backward``) against
central differences at every coordinate of the input and of every parameter.
Meant to run on float64 nodes; float32 rounding drowns the h=1e-5 stencil.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tolerance: float


def _loss(node, x: np.ndarray, direction: np.ndarray) -> float:
    return float(np.sum(node.forward(x) * direction))


def finite_difference_check(
    node, x: np.ndarray, tolerance: float = 1e-4, h: float = 1e-5, seed: int = 0
) -> GradCheckReport:
    """Check ``node.backward`` against central differences.

    Relative error uses the numeric estimate as the reference,
    ``|analytic - numeric| / max(|numeric|, 1e-6)``, so a gradient that is
    off by a factor of two reports an error near 1.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    y = node.forward(x)
    direction = rng.standard_normal(np.shape(y))
    if direction.ndim == 0:
        direction = direction[()]  # scalar loss: plain float projection

    for p in node.params():
        p.zero_grad()
    dx = node.backward(np.asarray(direction, dtype=np.float64) if np.ndim(y) else float(direction))
    analytic = [np.asarray(dx, dtype=np.float64)] + [p.grad.copy() for p in node.params()]

    targets = [x] + [p.value for p in node.params()]
    max_rel = 0.0
    for arr, ana in zip(targets, analytic):
        flat = arr.reshape(-1)
        ana_flat = np.asarray(ana, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(node, x, direction)
            flat[i] = orig - h
            down = _loss(node, x, direction)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            rel = abs(ana_flat[i] - numeric) / max(abs(numeric), 1e-6)
            if rel > max_rel:
                max_rel = rel
    return GradCheckReport(max_rel_err=max_rel, passed=max_rel < tolerance, tolerance=tolerance)
