"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``x.data``.

    With ``index`` (iterable of flat positions) only those entries are probed;
    the others are left as NaN.
    """
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if index is None else index
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    rtol: float = 1e-6,
    atol: float = 1e-8,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic and numerical gradients of the scalar ``fn()``.

    An entry passes when ``|analytic - numeric| <= rtol * max(|a|, |n|) + atol``.
    Returns the worst ``|a - n| / max(|a|, |n|, atol / rtol)``, the relative
    error wherever the relative criterion governs; raises
    ``AssertionError`` on failure.  ``max_entries`` limits the probed entries per
    input (chosen by ``rng``) for large parameter sets.
    """
    for x in inputs:
        x.grad = None
        x.data = np.ascontiguousarray(x.data)
    fn().backward()
    worst = 0.0
    for k, x in enumerate(inputs):
        analytic = np.zeros(x.shape) if x.grad is None else np.asarray(x.grad, dtype=np.float64)
        if max_entries is not None and x.size > max_entries:
            rng = rng or np.random.default_rng(0)
            index = rng.choice(x.size, size=max_entries, replace=False)
        else:
            index = range(x.size)
        numeric = numerical_grad(fn, x, h, index)
        a = analytic.reshape(-1)[list(index)]
        n = numeric.reshape(-1)[list(index)]
        err = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        bad = err > rtol * scale + atol
        worst = max(worst, float(np.max(err / np.maximum(scale, atol / rtol), initial=0.0)))
        if np.any(bad):
            j = int(np.argmax(bad))
            name = x.name or f"input{k}"
            raise AssertionError(
                f"gradcheck failed for {name}: analytic={a[j]:.6e} numeric={n[j]:.6e} "
                f"({int(bad.sum())}/{bad.size} entries out of tolerance)"
            )
    return worst
