"""
First-order optimizers over named parameter dictionaries.
"""

from collections.abc import Mapping

import numpy as np

from latent_forensics.autodiff.tensor import Tensor


class MomentumSGD:
    """
    Heavy-ball SGD: v <- momentum * v - lr * g; p <- p + v
    """

    def __init__(self, learning_rate: float, momentum: float = 0.9):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.learning_rate: float = learning_rate
        self.momentum: float = momentum
        self._velocity: dict[str, Tensor] = {}

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, Tensor]) -> dict[str, Tensor]:
        updated: dict[str, Tensor] = {}
        for name, value in params.items():
            if name not in grads:
                updated[name] = value
                continue
            velocity = self.momentum * self._velocity.get(name, np.zeros_like(value)) - self.learning_rate * grads[name]
            self._velocity[name] = velocity
            updated[name] = value + velocity
        return updated


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate: float = learning_rate
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.eps: float = eps
        self._m: dict[str, Tensor] = {}
        self._v: dict[str, Tensor] = {}
        self._t: int = 0

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, Tensor]) -> dict[str, Tensor]:
        self._t += 1
        correction1 = 1.0 - self.beta1**self._t
        correction2 = 1.0 - self.beta2**self._t

        updated: dict[str, Tensor] = {}
        for name, value in params.items():
            if name not in grads:
                updated[name] = value
                continue
            g = grads[name]
            m = self.beta1 * self._m.get(name, np.zeros_like(value)) + (1.0 - self.beta1) * g
            v = self.beta2 * self._v.get(name, np.zeros_like(value)) + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            updated[name] = value - self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        return updated
