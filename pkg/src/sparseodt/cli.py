"""``sparseodt`` command line.

Subcommands: ``phantom``, ``traditional``, ``train``, ``infer``, ``eval``, ``bench``.
Exit codes: 0 success, 1 runtime failure, 2 invalid input or file format.
Logs go to stderr; ``eval`` and ``bench`` write their reports to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .metrics import evaluate
from .odtio import FormatError, read_odtr, read_pgm, write_pgm
from .phantom import PhantomError, gen_dataset, load_dataset, save_dataset
from .sampling import sample_columns
from .scan import a_rss_scan
from .signal import InvalidInputError, ifft_depth, traditional_recon, wrap_phase
from .train import (
    TrainingDiverged,
    load_checkpoint,
    loss_csv,
    prepare,
    train,
    traditional_sparse,
)

log = logging.getLogger("sparseodt")

BENCH_HEADER = "length,sequential_ns,parallel_ns,max_abs_dev"


class UsageError(ValueError):
    """Arguments are well-formed but inconsistent with the inputs."""


VALIDATION_ERRORS = (UsageError, ConfigError, FormatError, InvalidInputError, PhantomError, FileNotFoundError)


def _check_stride(width: int, delta: int) -> None:
    if delta < 1:
        raise UsageError(f"sparsity must be >= 1, got {delta}")
    if width % delta:
        raise UsageError(f"sparsity {delta} does not divide B-scan width {width}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> int:
    cfg = load_config(args.config)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    samples = gen_dataset(cfg.phantom, args.count, args.seed)
    save_dataset(args.out, samples, cfg.phantom, args.seed)
    log.info("wrote %d phantoms to %s", args.count, args.out)
    return 0


def cmd_traditional(args) -> int:
    raw = read_odtr(args.inp)
    _check_stride(raw.width, args.stride)
    if args.stride > 1:
        flow = traditional_sparse(prepare(raw), args.stride, args.threshold, args.window)
    else:
        flow = traditional_recon(ifft_depth(raw), args.threshold, args.window)
    write_pgm(args.out, flow)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    model_cfg = cfg.model if args.sparsity is None else replace(cfg.model, delta=args.sparsity)
    train_cfg = cfg.train
    if args.iterations is not None:
        train_cfg = replace(train_cfg, iterations=args.iterations)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    data_dir = args.data or cfg.paths.data
    out = args.out or cfg.paths.out
    if not data_dir or not out:
        raise UsageError("--data and --out are required (or set paths.data / paths.out)")
    samples = load_dataset(data_dir)
    for s in samples:
        _check_stride(s.raw.width, model_cfg.delta)
        if s.gt_flow.shape != (s.raw.spectral_len, s.raw.width):
            raise UsageError(f"{s.name}: ground truth shape {s.gt_flow.shape} does not match raw data")
    if not Path(out).resolve().parent.is_dir():
        raise UsageError(f"output directory for {out} does not exist")
    if args.resume and not Path(args.resume).exists():
        raise UsageError(f"resume checkpoint {args.resume} not found")
    data = [prepare(s.raw, s.gt_flow) for s in samples]
    _, curve = train(data, model_cfg, train_cfg, cfg.loss, resume=args.resume, checkpoint_path=out)
    csv_path = args.loss_csv or str(out) + ".loss.csv"
    Path(csv_path).write_text(loss_csv(curve))
    log.info("checkpoint %s, loss curve %s", out, csv_path)
    return 0


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    delta = model.cfg.delta
    if args.sparsity is not None and args.sparsity != delta:
        raise UsageError(f"checkpoint was trained for sparsity {delta}, not {args.sparsity}")
    raw = read_odtr(args.inp)
    _check_stride(raw.width, delta)
    s = prepare(raw)
    y, m, p = model.predict(sample_columns(s.M, delta), sample_columns(s.P, delta))
    write_pgm(f"{args.out}_Y.pgm", y)
    write_pgm(f"{args.out}_M.pgm", np.clip(m, 0.0, 1.0))
    write_pgm(f"{args.out}_P.pgm", (wrap_phase(p) + np.pi) / (2 * np.pi))
    return 0


def _image_key(path: Path) -> str:
    stem = path.name[: -len(".pgm")]
    for suffix in (".gt", "_Y"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return stem


def _collect(location: str) -> dict[str, Path]:
    path = Path(location)
    if path.is_dir():
        files = sorted(path.glob("*.pgm"))
        files = [f for f in files if not f.name.endswith(("_M.pgm", "_P.pgm"))]
        if not files:
            raise UsageError(f"no .pgm images in {path}")
        return {_image_key(f): f for f in files}
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    return {"": path}


def cmd_eval(args) -> int:
    preds, gts = _collect(args.pred), _collect(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        pairs = [(next(iter(preds.values())), next(iter(gts.values())))]
    else:
        if set(preds) != set(gts):
            missing = sorted(set(gts) ^ set(preds))
            raise UsageError(f"prediction and ground-truth sets differ: {missing}")
        pairs = [(preds[k], gts[k]) for k in sorted(gts)]
    p_imgs = [read_pgm(p) for p, _ in pairs]
    g_imgs = [read_pgm(g) for _, g in pairs]
    for (p, g), a, b in zip(pairs, p_imgs, g_imgs):
        if a.shape != b.shape:
            raise UsageError(f"{p.name} is {a.shape} but {g.name} is {b.shape}")
    report = evaluate(p_imgs, g_imgs, with_mip=args.mip).to_dict()
    report["images"] = [g.name for _, g in pairs]
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _time_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best


def bench_rows(lengths, channels: int = 4, state: int = 8, repeats: int = 3, seed: int = 0) -> list[tuple]:
    """Timings of both scan modes on random 64-bit instances, one row per length."""
    rng = np.random.default_rng(seed)
    rows = []
    for L in lengths:
        x = rng.normal(size=(L, channels))
        delta = np.exp(rng.normal(size=(L, channels)) - 2.0)
        A = -np.exp(rng.normal(size=(channels, state)))
        B = rng.normal(size=(L, state))
        C = rng.normal(size=(L, state))
        D = rng.normal(size=channels)
        R = rng.random((L, channels))
        seq = a_rss_scan(x, delta, A, B, C, D, R, "sequential")
        par = a_rss_scan(x, delta, A, B, C, D, R, "parallel")
        t_seq = _time_ns(lambda: a_rss_scan(x, delta, A, B, C, D, R, "sequential"), repeats)
        t_par = _time_ns(lambda: a_rss_scan(x, delta, A, B, C, D, R, "parallel"), repeats)
        rows.append((L, t_seq, t_par, float(np.max(np.abs(seq - par)))))
    return rows


def cmd_bench(args) -> int:
    try:
        lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--lengths must be comma-separated integers ({exc})") from exc
    if not lengths or min(lengths) < 1 or args.channels < 1 or args.repeats < 1:
        raise UsageError("lengths, channels and repeats must be positive")
    print(BENCH_HEADER)
    for L, ts, tp, dev in bench_rows(lengths, args.channels, args.state, args.repeats):
        print(f"{L},{ts},{tp},{dev!r}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseodt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic phantom dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("traditional", help="phase-subtraction flow image from a raw B-scan")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_traditional)

    p = sub.add_parser("train", help="train the reconstruction network")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--sparsity", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-csv", dest="loss_csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct flow, magnitude and phase from sparse A-lines")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--sparsity", type=int)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="masked B-scan and MIP metrics as JSON")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mip", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time sequential and parallel scan modes")
    p.add_argument("--lengths", default="64,256,1024,4096")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--state", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        return 2
    except (OSError, TrainingDiverged, RuntimeError) as exc:
        log.error("%s", exc)
        return 1
    except ValueError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
