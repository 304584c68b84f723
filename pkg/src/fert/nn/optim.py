"""Plain SGD with classical momentum."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


class SGD:
    """v <- momentum * v + grad; w <- w - lr * v."""

    def __init__(self, params: list[Tensor], lr: float = 0.01, momentum: float = 0.9):
        if lr < 0:
            raise NumericError(f"learning rate must be >= 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise NumericError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
