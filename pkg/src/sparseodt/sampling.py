"""Sparse A-line sampling, B-line shuffle and interpolation baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import InvalidInputError, MagPhase


@dataclass(frozen=True)
class SparsePair:
    """Sparsely sampled magnitude/phase, ``[D, W']`` each, from a width ``W = delta * W'`` scan."""

    M_s: np.ndarray
    P_s: np.ndarray
    delta: int
    width: int


def sparse_sample(mp: MagPhase, delta: int) -> SparsePair:
    """Keep columns ``0, delta, 2*delta, ...`` (0-indexed) of both channels."""
    if delta < 1:
        raise InvalidInputError("delta must be >= 1")
    w = mp.M.shape[1]
    if w % delta:
        raise InvalidInputError(f"width {w} is not divisible by delta={delta}")
    return SparsePair(mp.M[:, ::delta].copy(), mp.P[:, ::delta].copy(), delta, w)


def sample_columns(x: np.ndarray, delta: int) -> np.ndarray:
    """Column subsampling of any array whose last axis is the B-line."""
    if delta < 1:
        raise InvalidInputError("delta must be >= 1")
    if x.shape[-1] % delta:
        raise InvalidInputError(f"width {x.shape[-1]} is not divisible by delta={delta}")
    return x[..., ::delta]


def b_shuffle(x: np.ndarray, delta: int) -> np.ndarray:
    """Rearrange ``[..., C*delta, D, W']`` into ``[..., C, D, W'*delta]``.

    ``out[c, z, w*delta + r] = x[c*delta + r, z, w]``; only the B-line is upscaled.
    """
    if delta < 1:
        raise InvalidInputError("delta must be >= 1")
    *lead, cd, d, wp = x.shape
    if cd % delta:
        raise InvalidInputError(f"channel count {cd} not divisible by delta={delta}")
    c = cd // delta
    y = x.reshape(*lead, c, delta, d, wp)
    y = np.moveaxis(y, -3, -1)  # [..., c, d, wp, delta]
    return np.ascontiguousarray(y).reshape(*lead, c, d, wp * delta)


def b_unshuffle(y: np.ndarray, delta: int) -> np.ndarray:
    """Inverse of :func:`b_shuffle`."""
    *lead, c, d, w = y.shape
    if w % delta:
        raise InvalidInputError(f"width {w} not divisible by delta={delta}")
    x = y.reshape(*lead, c, d, w // delta, delta)
    x = np.moveaxis(x, -1, -3)  # [..., c, delta, d, wp]
    return np.ascontiguousarray(x).reshape(*lead, c * delta, d, w // delta)


def _interp_rows(values: np.ndarray, delta: int, width: int, mode: str) -> np.ndarray:
    n = values.shape[1]
    if mode == "nearest":
        return np.repeat(values, delta, axis=1)[:, :width]
    x_known = np.arange(n) * delta
    x_all = np.arange(width)
    # beyond the last sample np.interp holds the edge value
    return np.stack([np.interp(x_all, x_known, row) for row in values])


def interp_baseline(sp: SparsePair, mode: str = "linear") -> MagPhase:
    """Dense magnitude/phase by per-row interpolation along the B-line.

    Phase is interpolated on the unit circle: cos and sin are interpolated and
    the angle re-extracted, which stays correct across the +-pi wrap.
    """
    if mode not in ("nearest", "linear"):
        raise InvalidInputError(f"unknown interpolation mode {mode!r}")
    m = _interp_rows(sp.M_s, sp.delta, sp.width, mode)
    if mode == "nearest":
        p = _interp_rows(sp.P_s, sp.delta, sp.width, mode)
    else:
        cs = _interp_rows(np.cos(sp.P_s), sp.delta, sp.width, mode)
        sn = _interp_rows(np.sin(sp.P_s), sp.delta, sp.width, mode)
        p = np.arctan2(sn, cs)
        p = np.where(p == -np.pi, np.pi, p)
    return MagPhase(m, p)
