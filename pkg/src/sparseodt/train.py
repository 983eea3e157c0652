"""Training loop, checkpoints and the reconstruction comparison protocol."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor
from .losses import LossParams, total_loss
from .model import ASBA, MODES, ModelConfig
from .odtio import read_checkpoint, write_checkpoint
from .optim import Adam, cosine_lr
from .sampling import interp_baseline, sample_columns, sparse_sample
from .signal import RawBScan, ifft_depth, mag_phase, traditional_recon

log = logging.getLogger(__name__)

LOSS_CSV_HEADER = ["iteration", "lr", "L", "L_Y", "L_M", "L_P"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    patch_depth: int = 64
    patch_width: int = 32
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("need iterations >= 0 and batch_size >= 1")
        if not self.lr_init >= self.lr_min > 0:
            raise ValueError("need lr_init >= lr_min > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


FULL_TRAIN = TrainConfig(iterations=100_000, batch_size=8, patch_depth=256, patch_width=64)


@dataclass
class Prepared:
    """Network-ready dense arrays of one B-scan: ``M`` normalised to [0, 1], wrapped ``P``."""

    M: np.ndarray
    P: np.ndarray
    flow: np.ndarray | None
    complex: np.ndarray


def prepare(raw: RawBScan, gt_flow: np.ndarray | None = None) -> Prepared:
    c = ifft_depth(raw)
    mp = mag_phase(c)
    peak = mp.M.max()
    m = mp.M / peak if peak > 0 else mp.M
    return Prepared(m, mp.P, None if gt_flow is None else np.asarray(gt_flow, dtype=np.float64), c)


# ---------------------------------------------------------------------------
# checkpoints


def _meta_tensors(cfg: ModelConfig) -> dict[str, np.ndarray]:
    meta = {}
    for key, value in cfg.to_dict().items():
        if key == "scan_mode":
            value = MODES.index(value)
        meta[f"meta.{key}"] = np.array([value], dtype=np.float32)
    return meta


def config_from_checkpoint(tensors: dict[str, np.ndarray]) -> ModelConfig:
    fields = {}
    for name, arr in tensors.items():
        if name.startswith("meta."):
            key = name[5:]
            value = int(arr[0])
            fields[key] = MODES[value] if key == "scan_mode" else value
    return ModelConfig.from_dict(fields)


def model_tensors(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in tensors.items() if not k.startswith(("meta.", "optim."))}


def save_checkpoint(path, model: ASBA, optimizer: Adam | None = None) -> None:
    tensors = dict(model.state_dict())
    tensors.update(_meta_tensors(model.cfg))
    if optimizer is not None and optimizer.state:
        names = [n for n, _ in model.named_parameters()]
        tensors["optim.step"] = np.array([optimizer.state["step"]], dtype=np.float32)
        for n, m, v in zip(names, optimizer.state["m"], optimizer.state["v"]):
            tensors[f"optim.m.{n}"] = m
            tensors[f"optim.v.{n}"] = v
    write_checkpoint(path, tensors)


def load_checkpoint(path, train_cfg: TrainConfig | None = None) -> tuple[ASBA, Adam]:
    tensors = read_checkpoint(path)
    cfg = config_from_checkpoint(tensors)
    model = ASBA(cfg)
    model.load_state_dict(model_tensors(tensors))
    tc = train_cfg or TrainConfig()
    opt = Adam(model.parameters(), tc.beta1, tc.beta2)
    if "optim.step" in tensors:
        names = [n for n, _ in model.named_parameters()]
        opt.state = {
            "step": int(tensors["optim.step"][0]),
            "m": [tensors[f"optim.m.{n}"].astype(np.float32) for n in names],
            "v": [tensors[f"optim.v.{n}"].astype(np.float32) for n in names],
        }
    return model, opt


# ---------------------------------------------------------------------------
# training


def make_batch(data: list[Prepared], delta: int, cfg: TrainConfig, iteration: int):
    """Random aligned crops for one iteration; the stream depends only on (seed, iteration)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, iteration]))
    d_full, w_full = data[0].M.shape
    pd = min(cfg.patch_depth, d_full)
    pw = min(cfg.patch_width, w_full)
    pw -= pw % delta
    if pw < delta:
        raise ValueError(f"patch width {cfg.patch_width} smaller than delta={delta}")
    ms, ps, ys, md, pdense = [], [], [], [], []
    for idx in rng.integers(0, len(data), size=cfg.batch_size):
        s = data[idx]
        z0 = int(rng.integers(0, s.M.shape[0] - pd + 1))
        x0 = delta * int(rng.integers(0, (s.M.shape[1] - pw) // delta + 1))
        sl = (slice(z0, z0 + pd), slice(x0, x0 + pw))
        m, p = s.M[sl], s.P[sl]
        ms.append(sample_columns(m, delta))
        ps.append(sample_columns(p, delta))
        ys.append(s.flow[sl])
        md.append(m)
        pdense.append(p)
    stack = lambda xs: np.stack(xs)[:, None].astype(np.float32)  # noqa: E731
    return stack(ms), stack(ps), stack(ys), stack(md), stack(pdense)


def _fmt(v: float) -> str:
    return repr(float(v))


def train(
    data: list[Prepared],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_params: LossParams = LossParams(),
    resume: str | os.PathLike | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    progress_every: int = 100,
) -> tuple[ASBA, list[dict]]:
    """Train on prepared samples; returns the model and the loss curve rows.

    Deterministic given ``train_cfg.seed``.  With ``checkpoint_every > 0`` the
    intermediate states go to ``<checkpoint_path>.iter<N>``; resuming from one
    of them with the same configs continues the identical trajectory.
    """
    if not data:
        raise ValueError("empty training set")
    if resume is not None:
        model, opt = load_checkpoint(resume, train_cfg)
        if model.cfg != model_cfg:
            raise ValueError("resume checkpoint was trained with a different model config")
        start = opt.state.get("step", 0) if opt.state else 0
    else:
        model = ASBA(model_cfg, seed=train_cfg.seed)
        opt = Adam(model.parameters(), train_cfg.beta1, train_cfg.beta2)
        start = 0

    curve: list[dict] = []
    delta = model_cfg.delta
    for it in range(start, train_cfg.iterations):
        lr = cosine_lr(it, train_cfg.iterations, train_cfg.lr_init, train_cfg.lr_min)
        ms, ps, ys, md, pdense = make_batch(data, delta, train_cfg, it)
        y_hat, m_hat, p_hat = model(Tensor(ms), Tensor(ps))
        loss, parts = total_loss(y_hat, ys, m_hat, md, p_hat, pdense, loss_params)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at iteration {it} (lr={lr:.3g})")
        opt.zero_grad()
        loss.backward()
        opt.step(lr)
        curve.append({"iteration": it, "lr": lr, "L": value, **parts})
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iter %d  lr %.3g  loss %.5f  L_Y %.5f", it + 1, lr, value, parts["L_Y"])
        if checkpoint_path and train_cfg.checkpoint_every and (it + 1) % train_cfg.checkpoint_every == 0:
            save_checkpoint(f"{checkpoint_path}.iter{it + 1}", model, opt)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, opt)
    return model, curve


def loss_csv(curve: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_CSV_HEADER)
    for row in curve:
        writer.writerow([row["iteration"]] + [_fmt(row[k]) for k in LOSS_CSV_HEADER[1:]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# reconstruction methods compared by the evaluation protocol


def asba_reconstruct(model: ASBA, s: Prepared) -> np.ndarray:
    delta = model.cfg.delta
    y, _, _ = model.predict(sample_columns(s.M, delta), sample_columns(s.P, delta))
    return y


def traditional_sparse(s: Prepared, delta: int, mask_threshold: float = 0.05, avg_window: int = 1) -> np.ndarray:
    """Phase subtraction between kept A-lines only, nearest-filled to full width."""
    sparse = sample_columns(s.complex, delta)
    if sparse.shape[1] < 2:
        raise ValueError("need at least two sampled columns")
    flow = traditional_recon(sparse, mask_threshold, avg_window)
    return np.repeat(flow, delta, axis=1)[:, : s.complex.shape[1]]


def interp_reconstruct(s: Prepared, delta: int, mode: str = "linear", mask_threshold: float = 0.05) -> np.ndarray:
    """Interpolate sparse magnitude/phase to full width, then phase subtraction."""
    dense = interp_baseline(sparse_sample(mag_phase(s.complex), delta), mode)
    return traditional_recon(dense.to_complex(), mask_threshold, 1)


def compare_methods(test: list[Prepared], delta: int, model: ASBA | None = None) -> dict:
    """Evaluation reports of every reconstruction method on the same test B-scans."""
    from .metrics import evaluate

    gts = [s.flow for s in test]
    methods = {
        "traditional": lambda s: traditional_sparse(s, delta),
        "linear": lambda s: interp_reconstruct(s, delta, "linear"),
    }
    if model is not None:
        if model.cfg.delta != delta:
            raise ValueError(f"model trained for delta={model.cfg.delta}, asked for {delta}")
        methods["asba"] = lambda s: asba_reconstruct(model, s)
    return {name: evaluate([f(s) for s in test], gts) for name, f in methods.items()}
