"""Adam and the cosine-annealed learning rate."""

from __future__ import annotations

import math

import numpy as np


def cosine_lr(t: float, total: float, lr_init: float = 2e-4, lr_min: float = 1e-6) -> float:
    """``lr_min + (lr_init - lr_min) * (1 + cos(pi * t / total)) / 2``."""
    if total <= 0:
        return lr_init
    if t <= 0:
        return lr_init
    if t >= total:
        return lr_min
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * t / total))


def adam_step(params, grads, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of numpy arrays, in place.

    ``state`` holds ``step`` and the lists ``m``/``v``; it is created on first use.
    """
    if "m" not in state:
        state["step"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict = {}

    def step(self, lr: float) -> None:
        arrays = [p.data for p in self.params]
        grads = [p.grad for p in self.params]
        adam_step(arrays, grads, self.state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
