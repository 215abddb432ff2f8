"""Context-length scaling sweep: chunked vs monolithic attention in the model.

Synthetic tasks stand in for real benchmark datasets. The train set is
shuffled once with the task seed, and every context length takes a prefix
of that shuffle, so a shorter context is always a subset of a longer one.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .attention import TileConfig
from .errors import ConfigError
from .memory import with_tracking
from .metrics import accuracy, auc, rmse
from .model import TabularTask, forward
from .weights import ModelConfig, init_tilt_weights

DEFAULT_BUDGET_BYTES = 2 * 1024**3
KINDS = ("linear-regression", "logistic-classification", "piecewise")
OK = "ok"
BUDGET_EXCEEDED = "budget-exceeded"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    seed: int = 0
    n_total: int = 512
    m: int = 256
    p: int = 8
    kind: str = "linear-regression"
    noise_std: float = 0.0
    weight_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; choose from {KINDS}")
        if min(self.n_total, self.m, self.p) < 1:
            raise ConfigError("n_total, m and p must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")

    @property
    def dataset_id(self):
        return f"{self.kind}-p{self.p}-s{self.seed}"


@dataclass(frozen=True)
class ScalingRecord:
    dataset_id: str
    context_length: int
    variant: str
    query_tile: int | None
    kv_tile: int | None
    batch_tile: int | None
    metric_name: str
    metric_value: float
    wallclock_seconds: float
    peak_bytes: int | None
    seed: int
    status: str = OK


FIELDS = tuple(f.name for f in dataclasses.fields(ScalingRecord))
TIMING_FIELDS = ("wallclock_seconds", "peak_bytes")


def _rng(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, stream]))


def target_fn(spec: SyntheticTaskSpec):
    """Noise-free latent function ``X -> score`` for the task family of ``spec``."""
    rng = _rng(spec.seed, 1)
    if spec.kind == "piecewise":
        thresholds = rng.normal(0.0, 0.5, spec.p)
        coef = rng.standard_normal(spec.p) * spec.weight_scale
        return lambda X: (np.asarray(X) > thresholds).astype(np.float64) @ coef
    w = rng.standard_normal(spec.p) * spec.weight_scale / np.sqrt(spec.p)
    return lambda X: np.asarray(X, dtype=np.float64) @ w


def gen_task(spec: SyntheticTaskSpec) -> TabularTask:
    rng = _rng(spec.seed, 0)
    X = rng.standard_normal((spec.n_total + spec.m, spec.p))
    score = target_fn(spec)(X)
    noise = rng.standard_normal(len(X)) * spec.noise_std
    if spec.kind == "logistic-classification":
        u = rng.uniform(size=len(X))
        # tanh form of the sigmoid stays finite for huge scores
        prob = 0.5 * (1.0 + np.tanh(0.5 * (score + noise)))
        y = (prob > u).astype(np.int64)
        num_classes = 2
    else:
        y = score + noise
        num_classes = None
    n = spec.n_total
    return TabularTask(X[:n], y[:n], X[n:], num_classes, y[n:])


def context_order(spec: SyntheticTaskSpec):
    """The single shuffle of train rows that every context length is a prefix of."""
    return _rng(spec.seed, 2).permutation(spec.n_total)


def monolithic_score_bytes(n, m, p, num_heads, bytes_per_scalar=4):
    """Largest full logits matrix any attention call would materialize."""
    largest = max(p * num_heads * n * n,  # train self-attention
                  p * num_heads * m * n,  # test -> train cross-attention
                  (n + m) * num_heads * p * p)  # between-feature attention
    return largest * bytes_per_scalar


def default_config(spec: SyntheticTaskSpec, seed=None):
    return ModelConfig(d_model=32, num_heads=4, num_layers=1,
                       num_classes=2 if spec.kind == "logistic-classification" else None,
                       seed=spec.seed if seed is None else seed)


def _score(task, dist):
    if task.is_regression:
        return "rmse", rmse(dist.mean, task.test_y)
    if task.num_classes == 2:
        return "auc", auc(dist.probs[:, 1], task.test_y)
    return "accuracy", accuracy(dist.probs, task.test_y)


def run_scaling(spec: SyntheticTaskSpec, context_lengths, config: ModelConfig | None = None,
                tiles: TileConfig | None = None, variants=("monolithic", "chunked"),
                budget_bytes=DEFAULT_BUDGET_BYTES, weights=None, track_memory=True,
                workers=1):
    """One ScalingRecord per (context length, variant).

    With ``track_memory`` the forward runs single-threaded inside a tracking
    scope and ``peak_bytes`` is the tracked kernel peak; otherwise it is
    None and ``workers`` threads may be used.
    """
    lengths = [int(n) for n in context_lengths]
    if lengths != sorted(lengths):
        raise ConfigError(f"context lengths must be ascending, got {lengths}")
    if lengths and (lengths[0] < 1 or lengths[-1] > spec.n_total):
        raise ConfigError(f"context lengths must lie in [1, n_total={spec.n_total}]")
    for v in variants:
        if v not in ("monolithic", "chunked"):
            raise ConfigError(f"unknown variant {v!r}")
    tiles = TileConfig() if tiles is None else tiles
    config = default_config(spec) if config is None else config
    w = init_tilt_weights(config, spec.p) if weights is None else weights
    if track_memory and workers > 1:
        raise ConfigError("memory tracking requires workers=1")

    task = gen_task(spec)
    order = context_order(spec)
    itemsize = config.dtype.itemsize
    records = []
    for n in lengths:
        sub = task.subset(train_idx=order[:n])
        for variant in variants:
            variant_tiles = None if variant == "monolithic" else tiles
            tile_cols = (None, None, None) if variant_tiles is None else (
                tiles.query_tile, tiles.kv_tile, tiles.batch_tile)
            metric_name = "rmse" if sub.is_regression else (
                "auc" if sub.num_classes == 2 else "accuracy")
            if variant == "monolithic" and monolithic_score_bytes(
                    n, spec.m, spec.p, config.num_heads, itemsize) > budget_bytes:
                records.append(ScalingRecord(spec.dataset_id, n, variant, *tile_cols,
                                             metric_name, math.nan, 0.0, None, spec.seed,
                                             BUDGET_EXCEEDED))
                continue
            start = time.perf_counter()
            if track_memory:
                dist, report = with_tracking(forward, sub, w, variant_tiles)
                peak = report.tracked_peak_bytes
            else:
                dist = forward(sub, w, variant_tiles, workers=workers)
                peak = None
            elapsed = time.perf_counter() - start
            metric_name, value = _score(sub, dist)
            records.append(ScalingRecord(spec.dataset_id, n, variant, *tile_cols,
                                         metric_name, value, elapsed, peak, spec.seed))
    return records


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records(records, path, append=False):
    """Write records as CSV; with ``append`` an existing file keeps its rows."""
    path = os.fspath(path)
    try:
        exists = append and os.path.exists(path) and os.path.getsize(path) > 0
        if exists:
            with open(path, newline="") as fh:
                header = next(csv.reader(fh), None)
            if tuple(header or ()) != FIELDS:
                raise ValueError(f"{path}: existing header does not match record fields")
        with open(path, "a" if exists else "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if not exists:
                writer.writerow(FIELDS)
            for rec in records:
                writer.writerow([_fmt(getattr(rec, f)) for f in FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc.strerror or exc}") from exc


def _parse(field, text):
    if field in ("dataset_id", "variant", "metric_name", "status"):
        return text
    if text == "":
        return None
    if field in ("metric_value", "wallclock_seconds"):
        return float(text)
    return int(text)


def read_records(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIELDS:
            raise ValueError(f"{path}: header does not match record fields")
        return [ScalingRecord(**{f: _parse(f, row[f]) for f in FIELDS}) for row in reader]


def plot_records(records, path):
    """SVG line plot of metric vs log context length, one series per variant."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tilepfn"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for variant in sorted({r.variant for r in records}):
        rows = [r for r in records if r.variant == variant and r.status == OK]
        if rows:
            ax.plot([r.context_length for r in rows], [r.metric_value for r in rows],
                    marker="o", label=variant)
    ax.set_xscale("log")
    ax.set_xlabel("context length")
    ax.set_ylabel(records[0].metric_name if records else "metric")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
