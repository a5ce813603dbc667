"""Minibatch SGD with classical momentum.

Update rule per parameter: v <- momentum * v + g; p <- p - lr * v.
Velocity buffers persist for the lifetime of the optimizer.
"""

from __future__ import annotations

import numpy as np

from .errors import GradientError


class SGD:
    def __init__(self, params, lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        """Apply one update from the gradients currently stored on the params."""
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GradientError(f"missing gradient for parameter {i} (shape {p.shape})")
            v = self._velocity[i]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None
