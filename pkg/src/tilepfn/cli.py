"""Command-line entry point: ``tilepfn check | bench | predict``."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import attention
from .attention import TileConfig, chunked_attention, reference_attention
from .bench import (DEFAULT_BUDGET_BYTES, KINDS, SyntheticTaskSpec, plot_records,
                    run_scaling, write_records)
from .errors import ConfigError, TilePFNError
from .model import TabularTask, forward
from .tensor import fill_random
from .weights import ModelConfig, init_tilt_weights, init_weights, load_weights

TOLERANCE = {"single": 1e-5, "double": 1e-10}


class CliError(Exception):
    pass


def _add_common(p):
    g = p.add_argument_group("tiling and execution")
    g.add_argument("--query-tile", type=int, default=512, help="query tile length (default: 512)")
    g.add_argument("--kv-tile", type=int, default=2048, help="key/value tile length (default: 2048)")
    g.add_argument("--batch-tile", type=int, default=8,
                   help="batch tile size, 0 for unbounded (default: 8)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    g.add_argument("--precision", choices=("single", "double"), default="single",
                   help="working precision (default: single)")
    g.add_argument("--workers", type=int, default=1,
                   help="threads over independent tiles (default: 1)")
    g.add_argument("--deterministic", action="store_true",
                   help="force single-threaded kernels for bit-identical output")


def _add_model(p, layers=1):
    g = p.add_argument_group("model")
    g.add_argument("--d-model", type=int, default=32, help="embedding width (default: 32)")
    g.add_argument("--heads", type=int, default=4, help="attention heads (default: 4)")
    g.add_argument("--layers", type=int, default=layers, help=f"layers (default: {layers})")
    g.add_argument("--init", choices=("tilt", "random"), default="tilt",
                   help="weight init when no weight file is given: 'tilt' wires an "
                        "in-context regressor, 'random' is plain scaled-normal (default: tilt)")


def build_parser():
    parser = argparse.ArgumentParser(prog="tilepfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="compare chunked attention with the float64 oracle")
    _add_common(check)
    check.add_argument("--batch", type=int, default=2, help="B (default: 2)")
    check.add_argument("--heads", type=int, default=2, help="H (default: 2)")
    check.add_argument("--lq", type=int, default=256, help="query length (default: 256)")
    check.add_argument("--lk", type=int, default=1024, help="key length (default: 1024)")
    check.add_argument("--dk", type=int, default=32, help="head dimension (default: 32)")
    check.add_argument("--tolerance", type=float, default=None,
                       help="max relative error (default: 1e-5 single, 1e-10 double)")
    check.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    bench = sub.add_parser("bench", help="context-length scaling sweep, written as CSV")
    _add_common(bench)
    _add_model(bench)
    bench.add_argument("--kind", choices=KINDS, default="linear-regression",
                       help="synthetic task family (default: linear-regression)")
    bench.add_argument("--p", type=int, default=8, help="features (default: 8)")
    bench.add_argument("--m", type=int, default=256, help="test rows (default: 256)")
    bench.add_argument("--noise-std", type=float, default=0.0, help="label noise (default: 0)")
    bench.add_argument("--n-total", type=int, default=None,
                       help="train pool size (default: largest length)")
    bench.add_argument("--lengths", default="64,256",
                       help="comma-separated ascending context lengths (default: 64,256)")
    bench.add_argument("--variants", default="monolithic,chunked",
                       help="comma-separated variants (default: monolithic,chunked)")
    bench.add_argument("--budget-bytes", type=int, default=DEFAULT_BUDGET_BYTES,
                       help="analytic score-matrix budget for the monolithic variant "
                            f"(default: {DEFAULT_BUDGET_BYTES})")
    bench.add_argument("--no-memory", action="store_true",
                       help="skip memory tracking (allows --workers > 1)")
    bench.add_argument("--out", required=True, help="CSV output path")
    bench.add_argument("--append", action="store_true", help="append to an existing CSV")
    bench.add_argument("--svg", default=None, help="also write an SVG plot here")

    predict = sub.add_parser("predict", help="predict test rows in one forward pass")
    _add_common(predict)
    _add_model(predict)
    predict.add_argument("--train", required=True,
                         help="train CSV with header; last column is the label")
    predict.add_argument("--test", required=True, help="test CSV with header, features only")
    predict.add_argument("--task", choices=("classification", "regression"),
                         default="classification", help="(default: classification)")
    predict.add_argument("--num-classes", type=int, default=None,
                         help="class count (default: max label + 1, at least 2)")
    src = predict.add_mutually_exclusive_group()
    src.add_argument("--weights", default=None, help="weight file to load")
    src.add_argument("--seed-init", type=int, default=None,
                     help="initialize weights from this seed (default: --seed)")
    predict.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return parser


def _tiles(args):
    return TileConfig(args.query_tile, args.kv_tile, args.batch_tile or None)


def _workers(args):
    return 1 if args.deterministic else max(1, args.workers)


def cmd_check(args, out):
    tiles = _tiles(args)
    tol = TOLERANCE[args.precision] if args.tolerance is None else args.tolerance
    seeds = [args.seed * 3 + i for i in range(3)]
    q, k, v = (fill_random((args.batch, args.heads, L, args.dk), s, args.precision)
               for s, L in zip(seeds, (args.lq, args.lk, args.lk)))
    ref = reference_attention(q, k, v).numpy()
    if args.inject_fault:
        with attention.inject_rescale_fault():
            got = chunked_attention(q, k, v, tiles, workers=_workers(args)).numpy()
    else:
        got = chunked_attention(q, k, v, tiles, workers=_workers(args)).numpy()
    err = float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))
    cfg = (f"B={args.batch} H={args.heads} Lq={args.lq} Lk={args.lk} dk={args.dk} "
           f"l={tiles.query_tile} r={tiles.kv_tile} m={tiles.batch_tile} "
           f"precision={args.precision} seed={args.seed}")
    print(f"max_relative_error={err!r} tolerance={tol!r}", file=out)
    if not err < tol:
        print(f"FAIL {cfg}", file=out)
        return 1
    print(f"OK {cfg}", file=out)
    return 0


def _int_list(text, flag):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{flag} must be comma-separated integers, got {text!r}") from None


def cmd_bench(args, out):
    lengths = _int_list(args.lengths, "--lengths")
    if not lengths:
        raise CliError("--lengths is empty")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    spec = SyntheticTaskSpec(seed=args.seed, n_total=args.n_total or max(lengths), m=args.m,
                             p=args.p, kind=args.kind, noise_std=args.noise_std)
    config = ModelConfig(d_model=args.d_model, num_heads=args.heads, num_layers=args.layers,
                         num_classes=2 if args.kind == "logistic-classification" else None,
                         seed=args.seed, precision=args.precision)
    weights = init_tilt_weights(config, args.p) if args.init == "tilt" else init_weights(config)
    records = run_scaling(spec, lengths, config, _tiles(args), variants, args.budget_bytes,
                          weights, track_memory=not args.no_memory, workers=_workers(args))
    write_records(records, args.out, append=args.append)
    if args.svg:
        plot_records(records, args.svg)
    print(f"wrote {len(records)} records to {args.out}", file=out)
    return 0


def read_csv_matrix(path, expect_cols=None):
    """Parse a numeric CSV with a header row; errors name the file and line."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CliError(f"{path}: missing header row")
        ncols = len(header) if expect_cols is None else expect_cols
        if len(header) != ncols:
            raise CliError(f"{path}: line 1: header has {len(header)} columns, expected {ncols}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncols:
                raise CliError(f"{path}: line {line}: expected {ncols} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise CliError(f"{path}: line {line}: non-numeric value in {row!r}") from None
    if not rows:
        raise CliError(f"{path}: no data rows")
    return header, np.array(rows, dtype=np.float64)


def cmd_predict(args, out):
    header, train = read_csv_matrix(args.train)
    if train.shape[1] < 2:
        raise CliError(f"{args.train}: need at least one feature column plus the label")
    _, test = read_csv_matrix(args.test, expect_cols=train.shape[1] - 1)
    x, y = train[:, :-1], train[:, -1]

    if args.weights:
        weights = load_weights(args.weights)
        config = weights.config
    else:
        num_classes = None
        if args.task == "classification":
            num_classes = args.num_classes or max(2, int(np.max(y)) + 1)
        seed = args.seed if args.seed_init is None else args.seed_init
        config = ModelConfig(d_model=args.d_model, num_heads=args.heads, num_layers=args.layers,
                             num_classes=num_classes, seed=seed, precision=args.precision)
        weights = (init_tilt_weights(config, x.shape[1]) if args.init == "tilt"
                   else init_weights(config))
    if args.task == "classification" and config.num_classes is not None and (
            np.max(y) >= config.num_classes or np.min(y) < 0):
        raise ConfigError(f"labels span [{np.min(y):g}, {np.max(y):g}] but the model has "
                          f"{config.num_classes} classes")
    task = TabularTask(x, y, test, config.num_classes if args.task == "classification" else None)
    dist = forward(task, weights, _tiles(args), workers=_workers(args))

    fh = open(args.out, "w", newline="") if args.out else out
    try:
        writer = csv.writer(fh, lineterminator="\n")
        if dist.probs is not None:
            writer.writerow([f"p{c}" for c in range(dist.probs.shape[1])])
            writer.writerows([[repr(float(p)) for p in row] for row in dist.probs])
        else:
            writer.writerow(["mean"])
            writer.writerows([[repr(float(v))] for v in dist.mean])
    finally:
        if fh is not out:
            fh.close()
    return 0


COMMANDS = {"check": cmd_check, "bench": cmd_bench, "predict": cmd_predict}


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except (CliError, TilePFNError, OSError, ValueError) as exc:
        print(f"tilepfn {args.command}: error: {exc}", file=err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
