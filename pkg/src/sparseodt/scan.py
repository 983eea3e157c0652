"""ROI-masked selective scan along the A-line.

For every channel ``c`` and state ``s`` the zero-order-hold discretisation is

    Abar = exp(delta * A)
    Bbar = (delta * A)^-1 (exp(delta * A) - 1) * delta * B

(``Bbar -> delta * B`` when ``|delta * A| < 1e-6``) and the recurrence is

    h_k = Abar_k * h_{k-1} + (R_k * Bbar_k) * x_k,    h_{-1} = 0
    y_k = sum_s C_k[s] * h_k[s] + D * x_k

Arrays follow ``[..., L, Ci]`` for per-channel inputs and ``[..., L, n]`` for
the selective ``B``/``C`` projections; ``A`` is ``[Ci, n]`` and ``D`` is ``[Ci]``.
``mode="parallel"`` evaluates the recurrence with a Hillis-Steele inclusive
scan over the associative pairs ``(a, b)``; it agrees with the sequential
loop up to rounding.
"""

from __future__ import annotations

import numpy as np

from .autodiff.tensor import Tensor, _state, make_result

SMALL_Z = 1e-6
_SERIES_Z = 1e-3
MODES = ("sequential", "parallel")


def _phi(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the limit value 1 for ``|z| < 1e-6``."""
    small = np.abs(z) < SMALL_Z
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0, np.expm1(safe) / safe)


def _dphi(z: np.ndarray) -> np.ndarray:
    """Derivative of :func:`_phi` (0 where ``_phi`` is held at its limit)."""
    az = np.abs(z)
    series = 0.5 + z / 3.0 + z * z / 8.0 + z**3 / 30.0
    safe = np.where(az < _SERIES_Z, 1.0, z)
    closed = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
    out = np.where(az < _SERIES_Z, series, closed)
    return np.where(az < SMALL_Z, 0.0, out)


def discretize(delta: np.ndarray, A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Abar, Bbar)`` of shape ``[..., L, Ci, n]``."""
    dA = delta[..., None] * A
    return np.exp(dA), _phi(dA) * delta[..., None] * B[..., None, :]


def linear_recurrence(a: np.ndarray, b: np.ndarray, mode: str = "sequential") -> np.ndarray:
    """Solve ``h_k = a_k * h_{k-1} + b_k`` (``h_{-1} = 0``) along axis 0."""
    if mode == "sequential":
        h = np.empty_like(b)
        h[0] = b[0]
        for k in range(1, b.shape[0]):
            h[k] = a[k] * h[k - 1] + b[k]
        return h
    if mode == "parallel":
        acc_a = a.copy()
        acc_b = b.copy()
        n = b.shape[0]
        step = 1
        while step < n:
            acc_b[step:] = acc_a[step:] * acc_b[:-step] + acc_b[step:]
            acc_a[step:] = acc_a[step:] * acc_a[:-step]
            step *= 2
        return acc_b
    raise ValueError(f"unknown scan mode {mode!r}; expected one of {MODES}")


def reverse_linear_recurrence(a: np.ndarray, b: np.ndarray, mode: str = "sequential") -> np.ndarray:
    """Solve ``g_k = a_k * g_{k+1} + b_k`` (``g_L = 0``) along axis 0."""
    return linear_recurrence(a[::-1], b[::-1], mode)[::-1]


def _check(x, delta, A, B, C, D, R) -> None:
    if x.ndim < 2:
        raise ValueError("x must be at least [L, Ci]")
    L, ci = x.shape[-2:]
    if L < 1:
        raise ValueError("scan length must be >= 1")
    n = A.shape[-1]
    if delta.shape != x.shape:
        raise ValueError(f"delta shape {delta.shape} != x shape {x.shape}")
    if R is not None and R.shape != x.shape:
        raise ValueError(f"R shape {R.shape} != x shape {x.shape}")
    if A.shape != (ci, n) or D.shape != (ci,):
        raise ValueError(f"A must be [{ci}, n] and D [{ci}], got {A.shape}, {D.shape}")
    if B.shape != x.shape[:-1] + (n,) or C.shape != B.shape:
        raise ValueError(f"B and C must be {x.shape[:-1] + (n,)}, got {B.shape}, {C.shape}")
    if np.any(delta <= 0):
        raise ValueError("delta must be strictly positive")


def _forward(x, delta, A, B, C, D, R, mode):
    # move the scan axis to the front: [L, ..., Ci] and [L, ..., n]
    xs = np.moveaxis(x, -2, 0)
    ds = np.moveaxis(delta, -2, 0)
    Bs = np.moveaxis(B, -2, 0)
    Cs = np.moveaxis(C, -2, 0)
    Abar, Bbar = discretize(ds, A, Bs)
    if R is None:
        drive = Bbar
    else:
        drive = np.moveaxis(R, -2, 0)[..., None] * Bbar
    h = linear_recurrence(Abar, drive * xs[..., None], mode)
    if _state["debug"] and not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite scan state")
    ys = np.einsum("...cn,...n->...c", h, Cs) + D * xs
    return np.moveaxis(ys, 0, -2), (xs, ds, Bs, Cs, Abar, Bbar, drive, h)


def a_rss_scan(x, delta, A, B, C, D, R=None, mode: str = "sequential") -> np.ndarray:
    """ROI-masked selective scan on plain arrays; ``R=None`` is the unmasked scan."""
    x, delta, A, B, C, D = (np.asarray(v) for v in (x, delta, A, B, C, D))
    R = None if R is None else np.asarray(R)
    _check(x, delta, A, B, C, D, R)
    return _forward(x, delta, A, B, C, D, R, mode)[0]


def selective_scan(x, delta, A, B, C, D, mode: str = "sequential") -> np.ndarray:
    """The unmasked scan, i.e. :func:`a_rss_scan` without an ROI mask."""
    return a_rss_scan(x, delta, A, B, C, D, None, mode)


def scan_op(
    x: Tensor,
    delta: Tensor,
    A: Tensor,
    B: Tensor,
    C: Tensor,
    D: Tensor,
    R: Tensor | None = None,
    mode: str = "sequential",
) -> Tensor:
    """Differentiable :func:`a_rss_scan` with an analytic reverse-scan backward."""
    _check(x.data, delta.data, A.data, B.data, C.data, D.data, None if R is None else R.data)
    Rd = None if R is None else R.data
    y, saved = _forward(x.data, delta.data, A.data, B.data, C.data, D.data, Rd, mode)
    xs, ds, Bs, Cs, Abar, Bbar, drive, h = saved
    Ad, Dd = A.data, D.data
    parents = (x, delta, A, B, C, D) + (() if R is None else (R,))

    def backward(g):
        gs = np.moveaxis(g, -2, 0)
        lead = tuple(range(gs.ndim - 1))
        gD = (gs * xs).sum(axis=lead)
        gC = np.einsum("...c,...cn->...n", gs, h)
        direct = gs[..., None] * Cs[..., None, :]
        a_next = np.concatenate([Abar[1:], np.zeros_like(Abar[:1])], axis=0)
        dh = reverse_linear_recurrence(a_next, direct, mode)
        h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)

        gx = gs * Dd + (dh * drive).sum(axis=-1)
        g_drive = dh * xs[..., None]
        if R is None:
            gR = None
            g_bbar = g_drive
        else:
            gR = (g_drive * Bbar).sum(axis=-1)
            g_bbar = g_drive * np.moveaxis(Rd, -2, 0)[..., None]

        dA = ds[..., None] * Ad
        phi = _phi(dA)
        d_b = ds[..., None] * Bs[..., None, :]
        g_dA = dh * h_prev * Abar + g_bbar * d_b * _dphi(dA)
        g_delta = (g_bbar * phi * Bs[..., None, :]).sum(axis=-1) + (g_dA * Ad).sum(axis=-1)
        gB = (g_bbar * phi * ds[..., None]).sum(axis=-2)
        gA = (g_dA * ds[..., None]).sum(axis=lead)

        back = lambda v: np.moveaxis(v, 0, -2)  # noqa: E731
        grads = (back(gx), back(g_delta), gA, back(gB), back(gC), gD)
        return grads if R is None else grads + (back(gR),)

    return make_result(y, parents, backward)
