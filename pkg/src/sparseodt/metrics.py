"""Image-quality metrics and the masked B-scan / en-face MIP protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

MASK_LEVEL = 0.05


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, mask: np.ndarray | None = None) -> float:
    """PSNR in dB; ``inf`` for identical inputs and ``nan`` for an empty mask."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
        if diff.size == 0:
            return math.nan
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r : img.shape[0] - r, r : img.shape[1] - r]


def ssim_map(a, b, data_range: float = 1.0, size: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03) -> np.ndarray:
    """Single-scale SSIM at every valid (fully inside) window position.

    Images smaller than the window shrink it to the largest odd size that fits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    size = min(size, min(a.shape) - (1 - min(a.shape) % 2))
    g = gaussian_window(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b, mask: np.ndarray | None = None, data_range: float = 1.0) -> float:
    """Mean SSIM over valid windows; with ``mask``, over windows centred on masked pixels."""
    smap = ssim_map(a, b, data_range)
    if mask is None:
        return float(smap.mean())
    mask = np.asarray(mask, dtype=bool)
    rz = (mask.shape[0] - smap.shape[0]) // 2
    rx = (mask.shape[1] - smap.shape[1]) // 2
    centre = mask[rz : rz + smap.shape[0], rx : rx + smap.shape[1]]
    if not centre.any():
        return math.nan
    return float(smap[centre].mean())


def eval_mask(gt: np.ndarray) -> np.ndarray:
    """Pixels whose normalised ground truth strictly exceeds 5% of full scale."""
    return np.asarray(gt) > MASK_LEVEL


def mip(volume) -> np.ndarray:
    """En-face maximum intensity projection: one row per B-scan, max over depth."""
    return np.stack([np.asarray(b).max(axis=0) for b in volume])


@dataclass
class EvalReport:
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    mask_fraction: list = field(default_factory=list)
    mip_psnr: float | None = None
    mip_ssim: float | None = None

    @staticmethod
    def _mean(values) -> float | None:
        good = [v for v in values if v is not None and not math.isnan(v)]
        return float(np.mean(good)) if good else None

    @property
    def psnr_mean(self):
        return self._mean(self.psnr)

    @property
    def ssim_mean(self):
        return self._mean(self.ssim)

    def to_dict(self) -> dict:
        clean = lambda v: None if v is None or (isinstance(v, float) and math.isnan(v)) else v  # noqa: E731
        return {
            "bscan": {
                "psnr": [clean(v) for v in self.psnr],
                "ssim": [clean(v) for v in self.ssim],
                "psnr_mean": self.psnr_mean,
                "ssim_mean": self.ssim_mean,
                "mask_fraction": self.mask_fraction,
            },
            "mip": {"psnr": self.mip_psnr, "ssim": self.mip_ssim},
        }


def evaluate(preds, gts, with_mip: bool = True) -> EvalReport:
    """Masked B-scan PSNR/SSIM per image plus PSNR/SSIM of the en-face MIP.

    Images with an empty mask get ``nan`` (undefined) and are skipped in means.
    """
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    report = EvalReport()
    for p, g in zip(preds, gts):
        mask = eval_mask(g)
        report.mask_fraction.append(float(mask.mean()))
        report.psnr.append(psnr(p, g, 1.0, mask))
        report.ssim.append(ssim(p, g, mask))
    if with_mip:
        mp, mg = mip(preds), mip(gts)
        report.mip_psnr = psnr(mp, mg)
        report.mip_ssim = ssim(mp, mg)
    return report
