"""SGD with momentum and weight decay, plus the warmup-cosine LR schedule.

The schedule ramps linearly from the warmup start value to the peak over
the warmup steps, then follows a half cosine from the peak down toward
zero over the remaining steps; it is continuous at the boundary and the
last step sits just above zero.
"""

from __future__ import annotations

import math

import numpy as np


def warmup_cosine_lr(
    step: int,
    total_steps: int,
    peak_lr: float,
    warmup_steps: int,
    warmup_start_lr: float = 0.01,
) -> float:
    """Learning rate at a global step index."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if warmup_steps >= total_steps:
        raise ValueError("warmup must end before the schedule does")
    if peak_lr <= 0 or warmup_start_lr <= 0:
        raise ValueError("learning rates must be positive")
    if step < warmup_steps:
        frac = step / warmup_steps
        return warmup_start_lr + (peak_lr - warmup_start_lr) * frac
    span = total_steps - warmup_steps
    frac = (step - warmup_steps) / span
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class SgdMomentum:
    """v <- m*v + (grad + wd*param); param <- param - lr*v (in place)."""

    def __init__(self, params: list, momentum: float = 0.9, weight_decay: float = 1e-6):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.values) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            g = p.grad
            if g.shape != p.values.shape:
                raise ValueError(f"grad shape {g.shape} != param shape {p.values.shape}")
            update = g + self.weight_decay * p.values
            v *= self.momentum
            v += update
            p.values -= (lr * v).astype(p.values.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
