"""Fixed-step gradient descent with optional momentum and global-norm clipping."""

from __future__ import annotations

import numpy as np


def clip_by_global_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if max_norm is not None and total > max_norm:
        s = max_norm / total
        for p in params:
            p.grad = p.grad * s
    return total


class GradientDescent:
    def __init__(self, params, lr: float, momentum: float = 0.0, clip: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = [np.zeros_like(p.data) for p in self.params] if momentum else None

    def step(self) -> float:
        norm = clip_by_global_norm(self.params, self.clip)
        for i, p in enumerate(self.params):
            g = p.grad
            if self.velocity is not None:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.assign(p.data - self.lr * g)
        return norm

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        if self.velocity is None:
            return {}
        return {f"velocity.{i}": v for i, v in enumerate(self.velocity)}

    def load_state_dict(self, state: dict):
        if self.velocity is None:
            return
        self.velocity = [np.array(state[f"velocity.{i}"]) for i in range(len(self.params))]
