"""Plain optimizers over named parameter dicts.

Parameters live in ``dict[str, Tensor]`` maps; tensors are immutable, so a
step returns a fresh dict.  State (velocities, moments) is keyed by name
and survives parameter replacement.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["Sgd", "Adam", "step_decay", "late_halving"]


def step_decay(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Divide the rate by 10 at 50% and again at 75% of the epoch budget."""
    lr = base_lr
    if epoch >= total_epochs // 2:
        lr /= 10.0
    if epoch >= (3 * total_epochs) // 4:
        lr /= 10.0
    return lr


def late_halving(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Halve the rate at 80% and again at 90% of the epoch budget."""
    lr = base_lr
    if epoch >= (8 * total_epochs) // 10:
        lr *= 0.5
    if epoch >= (9 * total_epochs) // 10:
        lr *= 0.5
    return lr


class Sgd:
    """Momentum SGD: v = mu v + g; p = p - lr v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor],
             grads: dict[str, Tensor]) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in params.items():
            g = grads[name].data
            v = self._velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self._velocity[name] = v
            out[name] = Tensor(p.data - self.lr * v)
        return out


class Adam:
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: dict[str, Tensor],
             grads: dict[str, Tensor]) -> dict[str, Tensor]:
        self._t += 1
        t = self._t
        out: dict[str, Tensor] = {}
        for name, p in params.items():
            g = grads[name].data
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            out[name] = Tensor(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out
