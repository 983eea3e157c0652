"""Synthetic raw B-scans with analytically known flow.

Each vessel is an ellipse carrying a parabolic (Poiseuille) phase-rate
profile ``omega_max * (1 - rho**2)``, where ``rho`` is the normalised
elliptical radius.  The depth-domain field is

    s(z, i) = a(z, i) * exp(j * (theta(z) + sum_{k < i} omega(z, k))) + n(z, i)

so the wrapped phase difference between columns ``i`` and ``i + 1`` equals
``omega(z, i)`` exactly when the sample is noiseless.  The static speckle
phase ``theta`` is random per depth row and constant along the B-line.  The
raw spectrum is the forward DFT of each column, so ``ifft_depth`` recovers
the field exactly.

Random streams come from numpy's PCG64 seeded with ``SeedSequence([seed, index])``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .odtio import read_odtr, read_pgm, write_odtr, write_pgm
from .signal import InvalidInputError, RawBScan, fft_depth


class PhantomError(InvalidInputError):
    """Invalid phantom geometry or parameters."""


@dataclass(frozen=True)
class Vessel:
    center: tuple[float, float]  # (z, x) in pixels
    radii: tuple[float, float]  # (r_z, r_x)
    omega_max: float  # radians per A-line step, in (0, pi]
    amplitude: float


@dataclass(frozen=True)
class PhantomSpec:
    depth: int
    width: int
    vessels: tuple[Vessel, ...] = ()
    background_amplitude: float = 0.3
    noise_sigma: float = 0.0
    seed: int = 0


@dataclass
class PhantomSample:
    raw: RawBScan
    gt_flow: np.ndarray
    gt_mag: np.ndarray
    gt_phase_rate: np.ndarray


@dataclass(frozen=True)
class PhantomTemplate:
    """Ranges from which :func:`gen_dataset` draws random phantom specs."""

    depth: int = 64
    width: int = 64
    vessel_count: tuple[int, int] = (1, 4)
    radius_z: tuple[float, float] = (3.0, 8.0)
    radius_x: tuple[float, float] = (6.0, 16.0)
    omega_fraction: tuple[float, float] = (0.25, 1.0)  # omega_max / pi
    amplitude: tuple[float, float] = (0.6, 1.0)
    background_amplitude: float = 0.3
    noise_sigma: float = 0.02

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomTemplate":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PhantomError(f"unknown phantom template keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _vessel_geometry(v: Vessel, depth: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    z = np.arange(depth)[:, None]
    x = np.arange(width)[None, :]
    rho2 = ((z - v.center[0]) / v.radii[0]) ** 2 + ((x - v.center[1]) / v.radii[1]) ** 2
    inside = rho2 < 1.0
    return inside, np.where(inside, 1.0 - rho2, 0.0)


def validate_spec(spec: PhantomSpec) -> None:
    if spec.depth < 2 or spec.width < 2:
        raise PhantomError("phantom needs depth >= 2 and width >= 2")
    if spec.background_amplitude <= 0:
        raise PhantomError("background amplitude must be positive")
    if spec.noise_sigma < 0:
        raise PhantomError("noise_sigma must be non-negative")
    occupied = np.zeros((spec.depth, spec.width), dtype=bool)
    for v in spec.vessels:
        if not 0 < v.omega_max <= np.pi:
            raise PhantomError(f"omega_max={v.omega_max} outside (0, pi]")
        if v.amplitude <= 0 or min(v.radii) <= 0:
            raise PhantomError("vessel amplitude and radii must be positive")
        zc, xc = v.center
        rz, rx = v.radii
        # the last column pair must stay flow-free: its flow value is replicated
        if zc - rz < 0 or zc + rz > spec.depth - 1 or xc - rx < 0 or xc + rx > spec.width - 2:
            raise PhantomError(f"vessel at {v.center} with radii {v.radii} leaves the image")
        inside, _ = _vessel_geometry(v, spec.depth, spec.width)
        if np.any(occupied & inside):
            raise PhantomError(f"vessel at {v.center} overlaps another vessel")
        occupied |= inside


def gen_phantom(spec: PhantomSpec) -> PhantomSample:
    validate_spec(spec)
    d, w = spec.depth, spec.width
    amp = np.full((d, w), float(spec.background_amplitude))
    omega = np.zeros((d, w))
    for v in spec.vessels:
        inside, profile = _vessel_geometry(v, d, w)
        amp[inside] = v.amplitude
        omega[inside] = v.omega_max * profile[inside]

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    theta = rng.uniform(-np.pi, np.pi, size=(d, 1))
    phase = theta + np.concatenate([np.zeros((d, 1)), np.cumsum(omega[:, :-1], axis=1)], axis=1)
    field_ = amp * np.exp(1j * phase)
    if spec.noise_sigma > 0:
        scale = spec.noise_sigma / np.sqrt(2.0)
        field_ = field_ + scale * (rng.standard_normal((d, w)) + 1j * rng.standard_normal((d, w)))

    return PhantomSample(
        raw=RawBScan(fft_depth(field_)),
        gt_flow=np.abs(omega) / np.pi,
        gt_mag=amp,
        gt_phase_rate=omega,
    )


def random_spec(template: PhantomTemplate, rng: np.random.Generator, seed: int) -> PhantomSpec:
    """Draw non-overlapping vessels by rejection sampling."""
    d, w = template.depth, template.width
    n_target = int(rng.integers(template.vessel_count[0], template.vessel_count[1] + 1))
    vessels: list[Vessel] = []
    occupied = np.zeros((d, w), dtype=bool)
    attempts = 0
    while len(vessels) < n_target and attempts < 200 * max(n_target, 1):
        attempts += 1
        rz = rng.uniform(*template.radius_z)
        rx = rng.uniform(*template.radius_x)
        if 2 * rz > d - 1 or 2 * rx > w - 2:
            continue
        zc = rng.uniform(rz, d - 1 - rz)
        xc = rng.uniform(rx, w - 2 - rx)
        v = Vessel(
            center=(float(zc), float(xc)),
            radii=(float(rz), float(rx)),
            omega_max=float(np.pi * rng.uniform(*template.omega_fraction)),
            amplitude=float(rng.uniform(*template.amplitude)),
        )
        inside, _ = _vessel_geometry(v, d, w)
        if np.any(inside & occupied):
            continue
        vessels.append(v)
        occupied |= inside
    return PhantomSpec(
        depth=d,
        width=w,
        vessels=tuple(vessels),
        background_amplitude=template.background_amplitude,
        noise_sigma=template.noise_sigma,
        seed=seed,
    )


def realized_spec(template: PhantomTemplate, seed: int, index: int) -> PhantomSpec:
    """The spec behind sample ``index`` of ``gen_dataset(template, _, seed)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    sample_seed = int(np.random.SeedSequence([seed, index, 2]).generate_state(1)[0])
    return random_spec(template, rng, sample_seed)


def gen_dataset(template: PhantomTemplate, count: int, seed: int) -> list[PhantomSample]:
    if count < 1:
        raise PhantomError("count must be >= 1")
    return [gen_phantom(realized_spec(template, seed, i)) for i in range(count)]


# ---------------------------------------------------------------------------
# on-disk layout: NNNN.odtr + NNNN.gt.pgm pairs plus manifest.json


def save_dataset(
    directory: str | os.PathLike, samples: list[PhantomSample], template: PhantomTemplate, seed: int
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        write_odtr(directory / f"{i:04d}.odtr", s.raw)
        write_pgm(directory / f"{i:04d}.gt.pgm", s.gt_flow)
    manifest = {"template": template.to_dict(), "count": len(samples), "seed": seed}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class LoadedSample:
    raw: RawBScan
    gt_flow: np.ndarray
    name: str = field(default="")


def load_dataset(directory: str | os.PathLike) -> list[LoadedSample]:
    directory = Path(directory)
    raws = sorted(directory.glob("*.odtr"))
    if not raws:
        raise PhantomError(f"no .odtr files in {directory}")
    out = []
    for r in raws:
        stem = r.name[: -len(".odtr")]
        gt = directory / f"{stem}.gt.pgm"
        if not gt.exists():
            raise PhantomError(f"missing ground truth {gt}")
        out.append(LoadedSample(read_odtr(r), read_pgm(gt), stem))
    return out


def manifest_digest(directory: str | os.PathLike) -> str:
    return hashlib.sha256((Path(directory) / "manifest.json").read_bytes()).hexdigest()
