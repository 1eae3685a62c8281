"""Adam with a multi-step learning-rate schedule, over one flat parameter vector."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "milestone_steps"]


def milestone_steps(fractions, total_steps):
    """Step indices at which the learning rate decays."""
    return sorted(int(round(f * total_steps)) for f in fractions)


class Adam:
    """Adam (Kingma & Ba) with frozen entries and a step-decay schedule.

    ``free`` marks the entries allowed to change; frozen entries are never
    touched, not even by a zero-valued update, so they stay bit-identical.
    ``lr_scale`` multiplies the step size per entry.
    """

    def __init__(self, size, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, milestones=(), gamma=0.1, free=None, lr_scale=None):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.milestones = sorted(milestones)
        self.gamma = gamma
        self.free = np.ones(size, dtype=bool) if free is None else np.asarray(free, dtype=bool)
        self.idx = np.flatnonzero(self.free)
        self.lr_scale = None if lr_scale is None else np.asarray(lr_scale, dtype=float)[self.idx]
        self.m = np.zeros(len(self.idx))
        self.v = np.zeros(len(self.idx))
        self.t = 0

    def current_lr(self) -> float:
        passed = sum(1 for s in self.milestones if self.t >= s)
        return self.lr * self.gamma**passed

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Update ``x`` in place and return it."""
        lr = self.current_lr()
        self.t += 1
        g = grad[self.idx]
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if self.lr_scale is not None:
            update = update * self.lr_scale
        x[self.idx] -= update
        return x
