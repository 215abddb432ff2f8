"""Dense 4-axis tensor substrate for the attention kernels.

Every tensor has the canonical shape ``(B, H, L, d)``; lower-rank data is
padded with leading extent-1 axes. Buffers are row-major numpy arrays marked
read-only, so all operations here are pure. Fresh buffers are reported to the
allocation tracker (see :mod:`tilepfn.memory`) when a tracking scope is open.

Working precision is ``float32`` ("single"); oracles use ``float64`` ("double").
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _tracking
from .errors import DimensionError, EmptyReductionError

NDIM = 4
_PRECISIONS = {"single": np.dtype(np.float32), "double": np.dtype(np.float64)}


def as_dtype(precision) -> np.dtype:
    """Map ``"single"``/``"double"`` or a float dtype to a numpy dtype."""
    if isinstance(precision, str) and precision in _PRECISIONS:
        return _PRECISIONS[precision]
    dt = np.dtype(precision)
    if dt not in _PRECISIONS.values():
        raise TypeError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


def _canonical(shape) -> tuple:
    shape = tuple(int(e) for e in shape)
    if len(shape) > NDIM:
        raise DimensionError(f"at most {NDIM} axes supported, got shape {shape}")
    return (1,) * (NDIM - len(shape)) + shape


class Tensor:
    __slots__ = ("_data", "_track", "__weakref__")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _PRECISIONS.values() else np.float64
        arr = np.array(arr, dtype=as_dtype(dtype), order="C", copy=True)
        self._init(arr.reshape(_canonical(arr.shape)), fresh=True)

    def _init(self, arr, fresh, output=False):
        arr.flags.writeable = False
        self._data = arr
        self._track = None
        tracker = _tracking.current()
        if tracker is not None and fresh:
            tracker.alloc(arr.nbytes, output)
            self._track = (tracker, arr.nbytes, output)

    @classmethod
    def _wrap(cls, arr, fresh=True, output=False) -> "Tensor":
        t = object.__new__(cls)
        t._init(arr.reshape(_canonical(arr.shape)), fresh, output)
        return t

    def __del__(self):
        track = getattr(self, "_track", None)
        if track is not None:
            tracker, nbytes, output = track
            tracker.free(nbytes, output)

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def precision(self) -> str:
        return "single" if self._data.dtype == np.float32 else "double"

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def nbytes(self) -> int:
        return self._data.nbytes

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        return self._data

    def astype(self, dtype) -> "Tensor":
        dt = as_dtype(dtype)
        if dt == self.dtype:
            return self
        return Tensor._wrap(self._data.astype(dt))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


@dataclass(frozen=True)
class Seed:
    """64-bit seed for :func:`fill_random`."""

    value: int

    def __post_init__(self):
        if not 0 <= int(self.value) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def _check_dtypes(a, b, op):
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def full(shape, value, dtype="single") -> Tensor:
    return Tensor._wrap(np.full(_canonical(shape), value, dtype=as_dtype(dtype)))


def zeros(shape, dtype="single") -> Tensor:
    return full(shape, 0.0, dtype)


def fill_random(shape, seed, dtype="single") -> Tensor:
    """Standard-normal fill, reproducible from ``(shape, seed)`` alone.

    Uses numpy's Philox4x64 counter-based generator keyed by the seed, drawing
    in float64 and rounding to the requested dtype.
    """
    seed = seed if isinstance(seed, Seed) else Seed(seed)
    rng = np.random.Generator(np.random.Philox(seed.value))
    shape = _canonical(shape)
    return Tensor._wrap(rng.standard_normal(shape).astype(as_dtype(dtype), copy=False))


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """``out[b,h] = a[b,h] @ b[b,h]`` for every batch/head pair."""
    _check_dtypes(a, b, "batched_matmul")
    if a.shape[:2] != b.shape[:2]:
        raise DimensionError(
            f"batched_matmul: batch/head axes differ, a{a.shape[:2]} vs b{b.shape[:2]}"
        )
    if a.shape[3] != b.shape[2]:
        raise DimensionError(
            f"batched_matmul: inner axes differ, a axis 3 = {a.shape[3]} "
            f"vs b axis 2 = {b.shape[2]}"
        )
    return Tensor._wrap(np.matmul(a._data, b._data))


def transpose_last(t: Tensor) -> Tensor:
    """Swap the last two axes. Returns a view; no buffer is allocated."""
    return Tensor._wrap(np.swapaxes(t._data, 2, 3), fresh=False)


def rowwise_reduce(t: Tensor, kind: str) -> Tensor:
    """Reduce the last axis with ``max`` or ``sum``; keeps it as extent 1."""
    if t.shape[3] == 0:
        raise EmptyReductionError("rowwise_reduce over an empty last axis")
    if kind == "max":
        out = np.max(t._data, axis=3, keepdims=True)
    elif kind == "sum":
        out = np.sum(t._data, axis=3, keepdims=True)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return Tensor._wrap(out)


def _check_broadcast(t, u, op):
    _check_dtypes(t, u, op)
    for axis, (et, eu) in enumerate(zip(t.shape, u.shape)):
        if eu != et and eu != 1:
            raise DimensionError(
                f"{op}: operand shape {u.shape} does not broadcast to {t.shape} "
                f"(axis {axis}: {eu} vs {et})"
            )


def exp(t: Tensor) -> Tensor:
    return Tensor._wrap(np.exp(t._data))


def scale(t: Tensor, c) -> Tensor:
    """Multiply by scalar ``c``, cast to the tensor's dtype first."""
    return Tensor._wrap(t._data * t.dtype.type(c))


def sub_broadcast(t: Tensor, u: Tensor) -> Tensor:
    _check_broadcast(t, u, "sub_broadcast")
    return Tensor._wrap(t._data - u._data)


def mul_broadcast(t: Tensor, u: Tensor) -> Tensor:
    _check_broadcast(t, u, "mul_broadcast")
    return Tensor._wrap(t._data * u._data)


def div_broadcast(t: Tensor, u: Tensor) -> Tensor:
    _check_broadcast(t, u, "div_broadcast")
    return Tensor._wrap(t._data / u._data)


def add(t: Tensor, u: Tensor) -> Tensor:
    _check_broadcast(t, u, "add")
    return Tensor._wrap(t._data + u._data)


def maximum(t: Tensor, u: Tensor) -> Tensor:
    _check_broadcast(t, u, "maximum")
    return Tensor._wrap(np.maximum(t._data, u._data))


_ELEMENTWISE = {
    "exp": exp,
    "scale": scale,
    "sub_broadcast": sub_broadcast,
    "mul_broadcast": mul_broadcast,
    "div_broadcast": div_broadcast,
    "add": add,
    "maximum": maximum,
}


def elementwise(t: Tensor, kind: str, operand=None) -> Tensor:
    """Dispatch by name, e.g. ``elementwise(t, "scale", 0.5)``."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(t) if kind == "exp" else fn(t, operand)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous copy of ``t[..., start:stop, ...]`` along ``axis``."""
    index = [slice(None)] * NDIM
    index[axis] = slice(start, stop)
    out = np.ascontiguousarray(t._data[tuple(index)])
    # an already-contiguous slice comes back as a view of the source
    return Tensor._wrap(out, fresh=out.flags.owndata)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    for other in tensors[1:]:
        _check_dtypes(tensors[0], other, "concat")
    return Tensor._wrap(np.concatenate([t._data for t in tensors], axis=axis))
