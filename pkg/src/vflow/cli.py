"""``vflow`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure.
All tabular output is CSV with shortest round-trip float formatting.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import secrets
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, build_model, load_config
from .data import make_splits, quantize
from .layers import InversionError
from .model import DivergenceError, Flow
from .numerics import Rng, derive_seed
from .objective import bits_per_dim, importance_log_likelihood
from .theory import UnsupportedLayerError, verify_theorem1
from .train import (
    METRIC_COLUMNS,
    STREAM_EVAL,
    CheckpointError,
    TrainingAborted,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(rows, header, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


def read_csv(path) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err.strerror}") from err
    if not rows:
        raise UsageError(f"{path}: empty file")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, -1)
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from err


def resolve_seed(flag, configured=None) -> int:
    if flag is not None:
        return flag
    if configured is not None:
        return configured
    seed = secrets.randbits(63)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _out_path(out, name):
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _load_model(path):
    try:
        ckpt = load_checkpoint(path)
    except OSError as err:
        raise UsageError(f"cannot read checkpoint {path}: {err.strerror}") from err
    return ckpt, ckpt.model()


# Commands


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_seed(resolve_seed(args.seed, cfg.seed))
    out = args.out or cfg.out
    model = build_model(cfg)
    train, test = make_splits(cfg.checkerboard())
    discrete = cfg.data.kind == "quantized"
    if discrete:
        spec = cfg.quantized()
        train, test = quantize(train, spec), quantize(test, spec)
    os.makedirs(out, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(" ".join(f"{k}={fmt(row[k])}" for k in METRIC_COLUMNS), file=sys.stderr, flush=True)

    state = train_loop(model, train, test, cfg.train, progress=progress)
    write_csv([[r[k] for k in METRIC_COLUMNS] for r in state.metrics], METRIC_COLUMNS,
              os.path.join(out, "metrics.csv"))
    save_checkpoint(os.path.join(out, "model.ckpt"), model, state, cfg.train, extra=cfg.to_dict())
    rng = Rng(derive_seed(cfg.seed, STREAM_EVAL))
    ll = importance_log_likelihood(model, test, cfg.eval_samples, rng, discrete=discrete)
    print(f"test_is_loglik_nats={fmt(np.mean(ll))}")
    if discrete:
        print(f"test_bpd={fmt(bits_per_dim(np.mean(ll), model.d_x))}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    _, model = _load_model(args.checkpoint)
    data = read_csv(args.data)
    if data.shape[1] != model.d_x:
        raise UsageError(f"dimension mismatch: checkpoint models {model.d_x}-dim data, "
                         f"{args.data} has {data.shape[1]} columns")
    discrete = model.r is not None
    rng = Rng(resolve_seed(args.seed))
    ll = importance_log_likelihood(model, data, args.samples, rng, discrete=discrete)
    print(f"mean_is_loglik_nats={fmt(np.mean(ll))}")
    if discrete:
        print(f"bpd={fmt(bits_per_dim(np.mean(ll), model.d_x))}")
    path = _out_path(args.out, "eval.csv")
    if path:
        write_csv(([i, v] for i, v in enumerate(ll)), ("index", "is_loglik_nats"), path)
    return EXIT_OK


def grid_points(lo, hi, resolution):
    """Cell centers of a resolution x resolution grid, row-major with x0 outermost."""
    h = (hi - lo) / resolution
    c = lo + (np.arange(resolution) + 0.5) * h
    g0, g1 = np.meshgrid(c, c, indexing="ij")
    return np.stack([g0.ravel(), g1.ravel()], axis=1), h * h


def cmd_grid(args) -> int:
    lo, hi = args.bounds
    if not lo < hi:
        raise UsageError("--bounds needs LO < HI")
    if args.resolution < 1 or args.samples < 1:
        raise UsageError("--resolution and --samples must be at least 1")
    _, model = _load_model(args.checkpoint)
    if model.d_x != 2:
        raise UsageError(f"grid export needs a 2-dimensional model, checkpoint has d_x={model.d_x}")
    if model.r is not None:
        raise UsageError("grid export needs a continuous model (checkpoint has a dequantization flow)")
    pts, area = grid_points(lo, hi, args.resolution)
    rng = Rng(resolve_seed(args.seed))
    logp = importance_log_likelihood(model, pts, args.samples, rng)
    path = _out_path(args.out, "grid.csv")
    write_csv(np.column_stack([pts, logp]), ("x0", "x1", "logp"), path)
    print(f"riemann_mass={fmt(np.sum(np.exp(logp)) * area)}", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.n < 1:
        raise UsageError("-n must be at least 1")
    _, model = _load_model(args.checkpoint)
    rng = Rng(resolve_seed(args.seed))
    x = model.sample(rng, args.n)
    header = [f"x{i}" for i in range(x.shape[1])]
    write_csv(x, header, _out_path(args.out, "samples.csv"))
    return EXIT_OK


def cmd_data_dump(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_seed(resolve_seed(args.seed, cfg.seed))
    train, test = make_splits(cfg.checkerboard())
    if cfg.data.kind == "quantized":
        spec = cfg.quantized()
        train, test = quantize(train, spec), quantize(test, spec)
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    header = [f"x{i}" for i in range(train.shape[1])]
    write_csv(train, header, os.path.join(out, "train.csv"))
    write_csv(test, header, os.path.join(out, "test.csv"))
    return EXIT_OK


def _theory_base(cfg, seed):
    th = cfg.theory
    if th.base_checkpoint:
        _, model = _load_model(th.base_checkpoint)
        if model.d_z or model.r is not None:
            raise UsageError("theory base checkpoint must be a plain flow (d_z = 0, no r-flow)")
        return model.p
    base_cfg = cfg.with_seed(seed)
    base_cfg = replace(base_cfg, model=replace(base_cfg.model, d_z=0, r_steps=0))
    model = build_model(base_cfg)
    if th.base_iterations:
        train, test = make_splits(base_cfg.checkerboard())
        tc = replace(base_cfg.train, iterations=th.base_iterations,
                     eval_every=th.base_iterations, eval_samples=1)
        train_loop(model, train, test, tc)
    return model.p


def cmd_check_theory(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg.seed)
    base: Flow = _theory_base(cfg, seed)
    rng = Rng(derive_seed(seed, STREAM_EVAL))
    ok = True
    for d_z in cfg.theory.d_z:
        report = verify_theorem1(base, d_z, cfg.theory.n_points, rng, cfg.theory.samples)
        summary = report.summary()
        ok = ok and summary["passed"]
        print(json.dumps(summary, sort_keys=True))
    print("embedding: " + ("pass" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vflow", description="Variational data augmentation for flows.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: from config, else drawn from entropy and printed)")
        sp.add_argument("--out", default=None, help=out_help)

    sp = sub.add_parser("train", help="train a model from a TOML config")
    sp.add_argument("config")
    sp.add_argument("--quiet", action="store_true", help="suppress per-eval progress lines")
    common(sp, "output directory (default: config 'out')")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="importance-sampled log-likelihood of a dataset")
    sp.add_argument("checkpoint")
    sp.add_argument("--data", required=True, help="CSV with a header row and d_x columns")
    sp.add_argument("--samples", type=int, default=100, help="importance samples S per point")
    common(sp, "directory for eval.csv with per-point estimates")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grid", help="log-density on a regular 2-D grid")
    sp.add_argument("checkpoint")
    sp.add_argument("--bounds", type=float, nargs=2, metavar=("LO", "HI"), default=(-10.0, 10.0))
    sp.add_argument("--resolution", type=int, default=400)
    sp.add_argument("--samples", type=int, default=64)
    common(sp, "directory for grid.csv (default: stdout)")
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("sample", help="draw samples of x")
    sp.add_argument("checkpoint")
    sp.add_argument("-n", type=int, default=1000)
    common(sp, "directory for samples.csv (default: stdout)")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("data-dump", help="write the train/test splits named by a config")
    sp.add_argument("config")
    common(sp, "output directory (default: config 'out')")
    sp.set_defaults(func=cmd_data_dump)

    sp = sub.add_parser("check-theory", help="verify the zero-padding embedding equalities")
    sp.add_argument("config")
    common(sp, "unused; reports go to stdout")
    sp.set_defaults(func=cmd_check_theory)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointError, UnsupportedLayerError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, DivergenceError, InversionError, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
