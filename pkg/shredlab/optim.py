"""
First-order optimizers over a ParamStore.

Both honour the store's constant masks: after every step masked entries of the
value (and of Adam's moment estimates) are exactly zero.
"""

from typing import Dict

import numpy as np

from .errors import ConfigError
from .nn import ParamStore


class SGD:
    def __init__(self, params: ParamStore, lr: float = 1e-2):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for name, var in self.params.items():
            var.value -= self.lr * var.grad
        self.params.apply_masks()


class Adam:
    """Adam with bias-corrected first and second moment estimates.

    Args:
        params: Store whose gradients drive the update
        lr: Step size
        betas: Exponential decay rates of the moment estimates
        eps: Denominator guard
    """

    def __init__(self, params: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {list(betas)}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: Dict[str, np.ndarray] = {name: np.zeros_like(var.value) for name, var in params.items()}
        self._v: Dict[str, np.ndarray] = {name: np.zeros_like(var.value) for name, var in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, var in self.params.items():
            m, v = self._m[name], self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * var.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * var.grad ** 2
            mask = self.params.mask(name)
            if mask is not None:
                m[~mask] = 0
                v[~mask] = 0
            var.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.params.apply_masks()


def make_optimizer(kind: str, params: ParamStore, lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}, expected 'adam' or 'sgd'")
