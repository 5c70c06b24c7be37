"""Adam optimizer with bias correction; the only optimizer here by design."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import Param, ShapeError


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100

    def __post_init__(self):
        # 0 is allowed so a no-op training run can be expressed
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must be in [0,1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    config: OptimizerConfig,
    step_index: int,
) -> None:
    """One in-place Adam update. ``step_index`` is 1-based for bias correction."""
    if step_index < 1:
        raise ValueError(f"step_index must be >= 1, got {step_index}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment pairs"
        )
    c1 = 1.0 - config.beta1**step_index
    c2 = 1.0 - config.beta2**step_index
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(
                f"adam_step: param {i} shape {p.shape} vs grad {g.shape} "
                f"vs state {state.m[i].shape}"
            )
        m = state.m[i]
        v = state.v[i]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * np.square(g)
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)


class Adam:
    """Stateful wrapper over ``adam_step`` for a list of ``Param``."""

    def __init__(self, params: list[Param], config: OptimizerConfig):
        self.params = params
        self.config = config
        self.state = AdamState([p.value for p in params])
        self.steps = 0

    def step(self) -> None:
        self.steps += 1
        adam_step(
            [p.value for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.config,
            self.steps,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
