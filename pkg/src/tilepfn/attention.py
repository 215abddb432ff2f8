"""Scaled dot-product attention: a float64 oracle and an exact tiled kernel.

The tiled kernel never materializes the full ``L_q x L_k`` logits matrix.
Queries are cut into tiles of at most ``query_tile`` rows and, for each query
tile, key/value tiles of at most ``kv_tile`` rows are folded into a running
``(mu, s, a)`` state::

    mu' = max(mu, rowmax(Z))
    s   = s * exp(mu - mu') + rowsum(exp(Z - mu'))
    a   = a * exp(mu - mu') + exp(Z - mu') @ V
    mu  = mu'

and the tile output is ``a / s``. The batch axis may additionally be split
into groups of ``batch_tile``. No dropout or other stochastic op appears
anywhere on this path.
"""
from __future__ import annotations

import contextlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _tracking
from . import tensor as T
from .errors import (
    DimensionError,
    EmptyContextError,
    InstrumentationError,
    PoisonedLogitError,
    TileConfigError,
)
from .tensor import Tensor

# flipped to -1 only by inject_rescale_fault(), a negative control for checks
_rescale_sign = 1


@contextlib.contextmanager
def inject_rescale_fault():
    """Test-only: flip the sign of the rescale exponent inside the merge."""
    global _rescale_sign
    _rescale_sign = -1
    try:
        yield
    finally:
        _rescale_sign = 1


@dataclass(frozen=True)
class TileConfig:
    """Tile lengths for queries, keys/values and the batch axis.

    ``batch_tile=None`` means the batch axis is never split.
    """

    query_tile: int = 512
    kv_tile: int = 2048
    batch_tile: int | None = 8

    def __post_init__(self):
        for name in ("query_tile", "kv_tile"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise TileConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.batch_tile is not None and (
            int(self.batch_tile) != self.batch_tile or self.batch_tile < 1
        ):
            raise TileConfigError(
                f"batch_tile must be an integer >= 1 or None, got {self.batch_tile!r}"
            )

    def effective(self, B, L_q, L_k):
        """Tile extents actually used for the given shapes: ``(m', l', r')``."""
        m = B if self.batch_tile is None else min(B, self.batch_tile)
        return m, min(L_q, self.query_tile), min(L_k, self.kv_tile)

    def is_single_tile(self, B, L_q, L_k):
        return self.effective(B, L_q, L_k) == (B, L_q, L_k)

    @classmethod
    def covering(cls, B, L_q, L_k):
        """The degenerate config that evaluates everything as one tile."""
        return cls(query_tile=max(L_q, 1), kv_tile=max(L_k, 1), batch_tile=max(B, 1))


@dataclass(frozen=True)
class MergeState:
    """Running softmax statistics for one query tile.

    ``mu`` and ``s`` are ``[B, H, l', 1]``, ``a`` is ``[B, H, l', d]``.
    ``consumed`` counts the keys folded in so far.
    """

    mu: Tensor
    s: Tensor
    a: Tensor
    consumed: int = 0

    @classmethod
    def initial(cls, B, H, rows, d, dtype="single"):
        return cls(
            mu=T.full((B, H, rows, 1), -np.inf, dtype),
            s=T.zeros((B, H, rows, 1), dtype),
            a=T.zeros((B, H, rows, d), dtype),
        )

    @property
    def dtype(self):
        return self.mu.dtype

    def output(self) -> Tensor:
        return T.div_broadcast(self.a, self.s)


@dataclass(frozen=True)
class FlopReport:
    matmul_flops: int
    exp_evals: int


def _check_qkv(q, k, v):
    if q.shape[3] != k.shape[3]:
        raise DimensionError(
            f"query/key feature axis mismatch: q d_k={q.shape[3]} vs k d_k={k.shape[3]}"
        )
    if q.shape[:2] != k.shape[:2] or k.shape[:2] != v.shape[:2]:
        raise DimensionError(
            f"batch/head axes differ: q{q.shape[:2]} k{k.shape[:2]} v{v.shape[:2]}"
        )
    if k.shape[2] != v.shape[2]:
        raise DimensionError(
            f"key/value length mismatch: k L_k={k.shape[2]} vs v L_k={v.shape[2]}"
        )
    if k.shape[2] == 0:
        raise EmptyContextError("attention over an empty key set (L_k = 0)")


def reference_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Monolithic float64 attention, used as the oracle.

    Inputs of any precision are promoted to float64 and the full score matrix
    is materialized. Softmax uses a single max subtraction per row.
    """
    _check_qkv(q, k, v)
    qd = q.numpy().astype(np.float64)
    kd = k.numpy().astype(np.float64)
    vd = v.numpy().astype(np.float64)
    scores = np.matmul(qd, np.swapaxes(kd, 2, 3)) / math.sqrt(qd.shape[3])
    scores -= scores.max(axis=3, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=3, keepdims=True)
    return Tensor._wrap(np.matmul(weights, vd))


def _logits(q_tile: Tensor, k_tile: Tensor, inv_sqrt_dk) -> Tensor:
    raw = T.batched_matmul(q_tile, T.transpose_last(k_tile))
    return T.scale(raw, inv_sqrt_dk)


def _inv_sqrt(d_k, dtype):
    # computed once in the working dtype
    dt = np.dtype(dtype).type
    return dt(1) / np.sqrt(dt(d_k))


def lse_merge_step(state: MergeState, z_tile: Tensor, v_tile: Tensor) -> MergeState:
    """Fold one logits tile and its value rows into ``state``.

    On the first step the rescale of the empty accumulators is skipped
    outright, so ``-inf`` in ``mu`` never meets ``-inf`` in ``mu'``.
    """
    z = z_tile.numpy()
    if not np.isfinite(z).all():
        bad = "NaN" if np.isnan(z).any() else "inf"
        raise PoisonedLogitError(f"logits tile contains {bad}")
    if z_tile.dtype != state.dtype or v_tile.dtype != state.dtype:
        raise DimensionError(
            f"dtype mismatch: state {state.dtype}, logits {z_tile.dtype}, values {v_tile.dtype}"
        )
    if z_tile.shape[:3] != state.mu.shape[:3]:
        raise DimensionError(
            f"logits tile {z_tile.shape} does not match state rows {state.mu.shape}"
        )

    tile_max = T.rowwise_reduce(z_tile, "max")
    first = state.consumed == 0
    mu_new = tile_max if first else T.maximum(state.mu, tile_max)
    shifted = T.sub_broadcast(z_tile, mu_new)
    p = T.exp(shifted)
    del shifted
    tile_sum = T.rowwise_reduce(p, "sum")
    pv = T.batched_matmul(p, v_tile)
    del p
    if first:
        s, a = tile_sum, pv
    else:
        delta = T.sub_broadcast(state.mu, mu_new)
        if _rescale_sign != 1:
            delta = T.scale(delta, _rescale_sign)
        alpha = T.exp(delta)
        s = T.add(T.mul_broadcast(state.s, alpha), tile_sum)
        a = T.add(T.mul_broadcast(state.a, alpha), pv)
    return MergeState(mu=mu_new, s=s, a=a, consumed=state.consumed + z_tile.shape[3])


def merge_states(x: MergeState, y: MergeState) -> MergeState:
    """Combine two states built from disjoint key sets (for tree merging)."""
    if x.consumed == 0:
        return y
    if y.consumed == 0:
        return x
    mu = T.maximum(x.mu, y.mu)
    ax = T.exp(T.sub_broadcast(x.mu, mu))
    ay = T.exp(T.sub_broadcast(y.mu, mu))
    s = T.add(T.mul_broadcast(x.s, ax), T.mul_broadcast(y.s, ay))
    a = T.add(T.mul_broadcast(x.a, ax), T.mul_broadcast(y.a, ay))
    return MergeState(mu=mu, s=s, a=a, consumed=x.consumed + y.consumed)


def _query_tile_output(q_tile, k, v, r, inv_sqrt_dk, merge):
    B, H, rows, d = q_tile.shape
    L_k = k.shape[2]
    starts = range(0, L_k, r)
    if merge == "tree":
        states = []
        for t0 in starts:
            z = _logits(q_tile, T.slice_axis(k, 2, t0, t0 + r), inv_sqrt_dk)
            fresh = MergeState.initial(B, H, rows, v.shape[3], q_tile.dtype)
            states.append(lse_merge_step(fresh, z, T.slice_axis(v, 2, t0, t0 + r)))
            del z
        while len(states) > 1:
            paired = [merge_states(states[i], states[i + 1]) for i in range(0, len(states) - 1, 2)]
            if len(states) % 2:
                paired.append(states[-1])
            states = paired
        return states[0].output()

    state = MergeState.initial(B, H, rows, v.shape[3], q_tile.dtype)
    for t0 in starts:
        k_tile = T.slice_axis(k, 2, t0, t0 + r)
        z = _logits(q_tile, k_tile, inv_sqrt_dk)
        del k_tile
        state = lse_merge_step(state, z, T.slice_axis(v, 2, t0, t0 + r))
        del z
    return state.output()


def chunked_attention(q: Tensor, k: Tensor, v: Tensor, tiles: TileConfig | None = None,
                      workers: int = 1, merge: str = "sequential") -> Tensor:
    """Exact attention evaluated tile by tile.

    Parameters
    ----------
    q : Tensor ``[B, H, L_q, d_k]``
    k, v : Tensor ``[B, H, L_k, d_k]``, same dtype as ``q``
    tiles : TileConfig, defaults to ``TileConfig()``
    workers : number of threads over independent (batch tile, query tile)
        pairs. ``1`` is the deterministic mode and is required while a
        memory-tracking scope is open.
    merge : ``"sequential"`` left-folds KV tiles in order; ``"tree"`` builds
        one state per KV tile and merges them pairwise.

    Returns
    -------
    Tensor ``[B, H, L_q, d_v]`` in the dtype of the inputs.
    """
    tiles = TileConfig() if tiles is None else tiles
    _check_qkv(q, k, v)
    if not (q.dtype == k.dtype == v.dtype):
        raise DimensionError(f"dtype mismatch: q {q.dtype}, k {k.dtype}, v {v.dtype}")
    if merge not in ("sequential", "tree"):
        raise ValueError(f"unknown merge mode {merge!r}")
    if workers > 1 and _tracking.is_active():
        raise InstrumentationError("parallel kernel evaluation inside a tracking scope")

    B, H, L_q, d_k = q.shape
    L_k, d_v = k.shape[2], v.shape[3]
    m, ell, r = tiles.effective(B, L_q, L_k)
    inv_sqrt_dk = _inv_sqrt(d_k, q.dtype)

    out = np.empty((B, H, L_q, d_v), dtype=q.dtype)
    out_t = Tensor._wrap(out, output=True)
    out.flags.writeable = True

    def work(b0, c0):
        if m == B:
            qb, kb, vb = q, k, v
        else:
            qb, kb, vb = (T.slice_axis(x, 0, b0, b0 + m) for x in (q, k, v))
        q_tile = T.slice_axis(qb, 2, c0, c0 + ell)
        o = _query_tile_output(q_tile, kb, vb, r, inv_sqrt_dk, merge)
        out[b0:b0 + m, :, c0:c0 + ell, :] = o.numpy()

    jobs = [(b0, c0) for b0 in range(0, B, m) for c0 in range(0, L_q, ell)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda job: work(*job), jobs))
    else:
        for job in jobs:
            work(*job)
    out.flags.writeable = False
    return out_t


def monolithic_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-tile evaluation in the inputs' dtype; materializes all logits.

    Runs the same primitive sequence as one merge step from an empty state,
    so it agrees bit for bit with ``chunked_attention`` under a covering
    tile config.
    """
    _check_qkv(q, k, v)
    inv_sqrt_dk = _inv_sqrt(q.shape[3], q.dtype)
    z = _logits(q, k, inv_sqrt_dk)
    row_max = T.rowwise_reduce(z, "max")
    p = T.exp(T.sub_broadcast(z, row_max))
    del z
    denom = T.rowwise_reduce(p, "sum")
    return T.div_broadcast(T.batched_matmul(p, v), denom)


def attend(q, k, v, tiles: TileConfig | None, workers: int = 1) -> Tensor:
    """Chunked attention, or the monolithic path when ``tiles`` is None."""
    if tiles is None:
        return monolithic_attention(q, k, v)
    return chunked_attention(q, k, v, tiles, workers=workers)


def flop_count(q_shape, k_shape, v_shape, tiles: TileConfig | None = None) -> FlopReport:
    """Analytic work for one attention call.

    ``matmul_flops`` counts a multiply-add as 2 for both the score and the
    value matmul and does not depend on tiling. ``exp_evals`` is one per
    logit plus one rescale factor per query row for every KV tile after the
    first.
    """
    B, H, L_q, d_k = T._canonical(q_shape)
    L_k = T._canonical(k_shape)[2]
    d_v = T._canonical(v_shape)[3]
    matmul = 2 * B * H * L_q * L_k * d_k + 2 * B * H * L_q * L_k * d_v
    n_kv_tiles = 1 if tiles is None else -(-L_k // tiles.effective(B, L_q, L_k)[2])
    return FlopReport(matmul_flops=matmul,
                      exp_evals=B * H * L_q * L_k + B * H * L_q * (n_kv_tiles - 1))
