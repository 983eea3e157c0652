"""Flow-aware weighted reconstruction loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, ops


@dataclass(frozen=True)
class LossParams:
    alpha: float = 0.5
    beta: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("need alpha > 0, beta >= 0, lam >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def flow_weight(y: np.ndarray, alpha: float = 0.5, beta: float = 0.1) -> np.ndarray:
    """Per-pixel weight ``y**alpha + beta`` from ground-truth flow in [0, 1]."""
    return np.power(np.asarray(y, dtype=np.float64), alpha) + beta


def weighted_mse(pred, target, w) -> Tensor:
    """``sum(w * (pred - target)**2) / sum(w)``; differentiable in ``pred``."""
    pred = as_tensor(pred)
    w = np.asarray(w, dtype=pred.dtype)
    target = target if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    total = float(np.sum(w))
    if total == 0.0:
        raise ValueError("weights sum to zero")
    if pred.shape != np.shape(target.data if isinstance(target, Tensor) else target):
        raise ValueError("prediction and target shapes differ")
    diff = pred - target
    return ops.sum(ops.square(diff) * w) * (1.0 / total)


def total_loss(y_hat, y, m_hat, m, p_hat, p, params: LossParams = LossParams()):
    """Return ``(L, parts)`` with ``L = L_Y + lam * (L_M + L_P)``.

    All three terms share the weights derived from the flow ground truth ``y``.
    The phase term compares ``cos`` and ``sin`` of the prediction and target,
    so it has no discontinuity at the +-pi wrap.
    """
    w = flow_weight(y, params.alpha, params.beta)
    loss_y = weighted_mse(y_hat, y, w)
    loss_m = weighted_mse(m_hat, m, w)
    p_hat = as_tensor(p_hat)
    loss_p = 0.5 * (weighted_mse(ops.cos(p_hat), np.cos(p), w) + weighted_mse(ops.sin(p_hat), np.sin(p), w))
    if params.lam == 0:
        total = loss_y
    else:
        total = loss_y + params.lam * (loss_m + loss_p)
    parts = {"L_Y": loss_y.item(), "L_M": loss_m.item(), "L_P": loss_p.item()}
    return total, parts
