"""Adaptive-moment optimizer and learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class Adam:
    """Adam with bias correction over a named parameter list.

    Updates are deterministic given parameters, gradients and state.
    `step()` raises UsageError naming any parameter whose gradient is missing.
    """

    def __init__(self, params: Iterable[tuple[str, Tensor]], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.98, epsilon: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for _, p in self.params]
        self.second_moment = [np.zeros_like(p.data) for _, p in self.params]

    def step(self) -> None:
        missing = [name for name, p in self.params if p.grad is None]
        if missing:
            raise UsageError(f"optimizer step with missing gradient for: {', '.join(missing)}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
            p.data -= self.learning_rate * update

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def clip_grad_norm(params: Iterable[tuple[str, Tensor]], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    grads = [p.grad for _, p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def warmup_inv_sqrt_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to base_lr, then decay proportional to 1/sqrt(step)."""
    step = max(step, 1)
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if warmup_steps > 0:
        return base_lr * math.sqrt(warmup_steps / step)
    return base_lr / math.sqrt(step)
