"""Adam and SGD-with-momentum over named parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step: int = 0
    # name -> tuple of moment buffers, each shaped like the parameter
    moments: Dict[str, tuple] = field(default_factory=dict)


class Optimizer:
    """Updates ``params`` in place from their ``.grad``.

    Parameters without a gradient after backward are skipped (frozen or not
    involved in the active problem).
    """

    kind = "base"

    def __init__(self, params: Dict[str, Tensor], lr: float):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = dict(params)
        self.state = OptimizerState(self.kind, float(lr))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.state.step += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self._update(name, p)

    def _update(self, name: str, p: Tensor) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = (float(b) for b in betas)
        self.eps = eps

    def _update(self, name, p):
        st = self.state
        if name not in st.moments:
            st.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = st.moments[name]
        g = p.grad
        m *= self.b1
        m += (1 - self.b1) * g
        v *= self.b2
        v += (1 - self.b2) * (g * g)
        t = st.step
        lr_t = st.learning_rate * np.sqrt(1 - self.b2 ** t) / (1 - self.b1 ** t)
        p.data -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype)


class SGDMomentum(Optimizer):
    kind = "sgd_momentum"

    def __init__(self, params, lr: float = 1e-2, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = float(momentum)

    def _update(self, name, p):
        st = self.state
        if name not in st.moments:
            st.moments[name] = (np.zeros_like(p.data),)
        (buf,) = st.moments[name]
        buf *= self.momentum
        buf += p.grad
        p.data -= (st.learning_rate * buf).astype(p.dtype)


def make_optimizer(kind: str, params, lr: float, betas=(0.9, 0.999), momentum: float = 0.9) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr, betas=betas)
    if kind == "sgd_momentum":
        return SGDMomentum(params, lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
