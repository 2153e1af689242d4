"""SGD with momentum and time-based learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeMismatchError, Tensor


@dataclass
class OptimizerState:
    learning_rate: float = 0.01
    decay: float = 1e-6
    momentum: float = 0.9
    velocities: dict[str, Tensor] = field(default_factory=dict)
    step_count: int = 0

    def current_lr(self) -> float:
        return self.learning_rate / (1.0 + self.decay * self.step_count)


def sgd_step(params: dict[str, Tensor], grads: dict[str, Tensor], state: OptimizerState) -> None:
    """One in-place update of every parameter.

    ``v <- momentum * v - lr_t * g`` then ``w <- w + v`` with
    ``lr_t = lr / (1 + decay * steps_taken)``.  Call once per minibatch.
    """
    lr = state.current_lr()
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatchError(w.shape, g.shape, f"parameter {name!r} and its gradient")
        v = state.velocities.get(name)
        if v is None:
            v = state.velocities[name] = np.zeros_like(w)
        v *= w.dtype.type(state.momentum)
        v -= w.dtype.type(lr) * g.astype(w.dtype, copy=False)
        w += v
    state.step_count += 1


class SGD:
    def __init__(self, learning_rate: float = 0.01, decay: float = 1e-6, momentum: float = 0.9):
        self.state = OptimizerState(learning_rate, decay, momentum)

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        sgd_step(params, grads, self.state)
