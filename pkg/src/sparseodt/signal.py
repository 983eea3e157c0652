"""Complex-signal foundations of Doppler OCT.

A raw B-scan holds one spectral-domain A-scan per column.  The inverse DFT
along each column gives the depth-resolved complex signal, whose magnitude
and phase feed both the classical phase-subtraction pipeline and the network.

Conventions
-----------
* The inverse transform carries the ``1/S`` factor (``numpy.fft.ifft``).
* The phase of a zero sample is 0.
* Displayed flow is unsigned: ``|dphi| / pi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d


class InvalidInputError(ValueError):
    """Raised for malformed or non-finite signal inputs."""


@dataclass(frozen=True)
class RawBScan:
    """Spectral-domain B-scan, ``data[k, i]`` is spectral sample ``k`` of A-scan ``i``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidInputError(f"raw B-scan must be 2-d, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise InvalidInputError(f"raw B-scan needs S >= 2 and W >= 2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("raw B-scan contains non-finite values")
        object.__setattr__(self, "data", arr.astype(np.complex128, copy=False))

    @property
    def spectral_len(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MagPhase:
    """Magnitude ``M >= 0`` and wrapped phase ``P`` in ``(-pi, pi]``, both ``[D, W]``."""

    M: np.ndarray
    P: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape

    def to_complex(self) -> np.ndarray:
        return self.M * np.exp(1j * self.P)


def _as_complex_2d(x) -> np.ndarray:
    arr = x.data if isinstance(x, RawBScan) else np.asarray(x)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("input contains non-finite values")
    return arr.astype(np.complex128, copy=False)


def ifft_depth(raw: RawBScan | np.ndarray) -> np.ndarray:
    """Inverse DFT of every column (1/S scaling); returns the complex ``[D, W]`` B-scan."""
    return np.fft.ifft(_as_complex_2d(raw), axis=0)


def fft_depth(c: np.ndarray) -> np.ndarray:
    """Forward DFT along depth, the exact inverse of :func:`ifft_depth`."""
    return np.fft.fft(_as_complex_2d(c), axis=0)


def direct_idft(column: np.ndarray) -> np.ndarray:
    """O(S^2) inverse DFT by explicit summation; reference for the FFT path."""
    column = np.asarray(column, dtype=np.complex128)
    s = column.shape[0]
    k = np.arange(s)
    kernel = np.exp(2j * np.pi * np.outer(k, k) / s)
    return kernel @ column / s


def direct_dft(column: np.ndarray) -> np.ndarray:
    column = np.asarray(column, dtype=np.complex128)
    s = column.shape[0]
    k = np.arange(s)
    return np.exp(-2j * np.pi * np.outer(k, k) / s) @ column


def wrap_phase(x):
    """Map angles into ``(-pi, pi]``."""
    w = np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def mag_phase(c: np.ndarray) -> MagPhase:
    c = _as_complex_2d(c)
    m = np.abs(c)
    p = np.angle(c)
    # angle() returns -pi for (-x, -0.0); fold onto the closed end of (-pi, pi]
    p = np.where(p == -np.pi, np.pi, p)
    p = np.where(m == 0, 0.0, p)
    return MagPhase(m, p)


def phase_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Wrapped phase change from ``a`` to ``b``: ``arg(b * conj(a))``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape} vs {b.shape}")
    # explicit real arithmetic keeps identical inputs at exactly zero
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    d = np.arctan2(bi * ar - br * ai, br * ar + bi * ai)
    return np.where(d == -np.pi, np.pi, d)


def traditional_recon(c: np.ndarray, mask_threshold: float = 0.05, avg_window: int = 1) -> np.ndarray:
    """Phase-subtraction Doppler flow image in ``[0, 1]``.

    Flow at column ``i`` comes from the pair ``(i, i+1)``; the last column
    repeats its left neighbour.  Pixels whose pair-averaged magnitude is
    below ``mask_threshold * max(M)`` are zeroed.
    """
    c = _as_complex_2d(c)
    if c.shape[1] < 2:
        raise InvalidInputError("traditional reconstruction needs W >= 2")
    if avg_window < 1:
        raise InvalidInputError("avg_window must be >= 1")
    if not 0.0 <= mask_threshold < 1.0:
        raise InvalidInputError("mask_threshold must lie in [0, 1)")

    dphi = phase_diff(c[:, :-1], c[:, 1:])
    flow = np.abs(dphi) / np.pi
    flow = np.concatenate([flow, flow[:, -1:]], axis=1)
    if avg_window > 1:
        flow = uniform_filter1d(flow, avg_window, axis=1, mode="nearest")

    m = np.abs(c)
    pair = 0.5 * (m[:, :-1] + m[:, 1:])
    pair = np.concatenate([pair, pair[:, -1:]], axis=1)
    flow = np.where(pair < mask_threshold * m.max(), 0.0, flow)
    return np.clip(flow, 0.0, 1.0)
