"""Adam optimizer over named parameter blocks.

Standard bias-corrected Adam (beta1=0.9, beta2=0.999, eps=1e-8), no weight
decay. The caller supplies the learning rate each step; the per-epoch
schedule lr0 * gamma**epoch lives in the training loop.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, lr: float, grads: dict | None = None) -> None:
        """Update every trainable block in a fixed order (deterministic)."""
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = grads[p.name] if grads is not None else p.grad
            if g is None:
                raise ValueError(f"no gradient for trainable block {p.name!r}")
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
