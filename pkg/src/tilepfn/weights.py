"""Model configuration, seeded weight init, and the binary weight file.

File layout (all integers little-endian)::

    magic      8 bytes  b"TILEPFNW"
    version    u8       1
    config     u32 d_model, u32 num_heads, u32 num_layers, u32 d_ff,
               u32 num_classes (0 = regression), u64 seed, u8 bytes_per_scalar
    n_arrays   u32
    per array: u16 name_len, name (utf-8), u8 ndim, u32 * ndim shape,
               raw little-endian buffer of prod(shape) * bytes_per_scalar bytes
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, WeightFormatError
from .tensor import Seed, as_dtype

MAGIC = b"TILEPFNW"
VERSION = 1
_CONFIG = struct.Struct("<IIIIIQB")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    num_heads: int = 4
    num_layers: int = 2
    num_classes: int | None = 2  # None selects the regression head
    d_ff: int | None = None  # defaults to 2 * d_model
    seed: int = 0
    precision: str = "single"

    def __post_init__(self):
        for name in ("d_model", "num_heads", "num_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.num_heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}"
            )
        if self.num_classes is not None and self.num_classes < 2:
            raise ConfigError("classification needs num_classes >= 2")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 2 * self.d_model)
        as_dtype(self.precision)
        Seed(self.seed)

    @property
    def d_k(self):
        return self.d_model // self.num_heads

    @property
    def is_regression(self):
        return self.num_classes is None

    @property
    def dtype(self):
        return as_dtype(self.precision)


@dataclass
class WeightSet:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def expected_shapes(self):
        return expected_shapes(self.config)

    def equals(self, other):
        """Bitwise equality of config and every array."""
        if self.config != other.config or self.arrays.keys() != other.arrays.keys():
            return False
        return all(
            self.arrays[n].dtype == other.arrays[n].dtype
            and self.arrays[n].tobytes() == other.arrays[n].tobytes()
            for n in self.arrays
        )


def _attn_shapes(prefix, d):
    return {f"{prefix}.ln_g": (d,), f"{prefix}.ln_b": (d,),
            f"{prefix}.wq": (d, d), f"{prefix}.wk": (d, d),
            f"{prefix}.wv": (d, d), f"{prefix}.wo": (d, d)}


def expected_shapes(config: ModelConfig) -> dict:
    d, f = config.d_model, config.d_ff
    shapes = {"embed.x_w": (d,), "embed.x_b": (d,), "embed.missing": (d,)}
    if config.is_regression:
        shapes["embed.y_w"] = (d,)
    else:
        shapes["embed.label"] = (config.num_classes, d)
    for i in range(config.num_layers):
        shapes.update(_attn_shapes(f"layers.{i}.feat", d))
        shapes.update(_attn_shapes(f"layers.{i}.items", d))
        shapes.update({f"layers.{i}.mlp.ln_g": (d,), f"layers.{i}.mlp.ln_b": (d,),
                       f"layers.{i}.mlp.w1": (d, f), f"layers.{i}.mlp.b1": (f,),
                       f"layers.{i}.mlp.w2": (f, d), f"layers.{i}.mlp.b2": (d,)})
    out = 1 if config.is_regression else config.num_classes
    shapes.update({"head.ln_g": (d,), "head.ln_b": (d,), "head.w": (d, out), "head.b": (out,)})
    return shapes


def init_weights(config: ModelConfig) -> WeightSet:
    """Seeded init: layer-norm gains 1 and shifts 0, everything else N(0, 1/d_model)."""
    rng = np.random.Generator(np.random.Philox(config.seed))
    std = 1.0 / np.sqrt(config.d_model)
    arrays = {}
    for name, shape in expected_shapes(config).items():
        if name.endswith(".ln_g"):
            arr = np.ones(shape)
        elif name.endswith(".ln_b"):
            arr = np.zeros(shape)
        else:
            arr = rng.standard_normal(shape) * std
        arrays[name] = arr.astype(config.dtype)
    return WeightSet(config, arrays)


def save_weights(w: WeightSet, path):
    c = w.config
    itemsize = c.dtype.itemsize
    chunks = [MAGIC, bytes([VERSION]),
              _CONFIG.pack(c.d_model, c.num_heads, c.num_layers, c.d_ff,
                           c.num_classes or 0, c.seed, itemsize),
              struct.pack("<I", len(w.arrays))]
    le = c.dtype.newbyteorder("<")
    for name, arr in w.arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, field):
        if self.pos + n > len(self.buf):
            raise WeightFormatError(
                field, f"truncated: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, field))


def load_weights(path) -> WeightSet:
    """Parse a weight file; raises ``WeightFormatError`` naming the bad field."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(len(MAGIC), "magic") != MAGIC:
        raise WeightFormatError("magic", "not a tilepfn weight file")
    (version,) = rd.unpack("<B", "version")
    if version != VERSION:
        raise WeightFormatError("version", f"unsupported version {version}")
    d_model, heads, layers, d_ff, n_cls, seed, itemsize = rd.unpack(_CONFIG.format, "config")
    if itemsize not in (4, 8):
        raise WeightFormatError("config.bytes_per_scalar", f"must be 4 or 8, got {itemsize}")
    try:
        config = ModelConfig(d_model=d_model, num_heads=heads, num_layers=layers,
                             num_classes=n_cls or None, d_ff=d_ff, seed=seed,
                             precision="single" if itemsize == 4 else "double")
    except ConfigError as exc:
        raise WeightFormatError("config", str(exc)) from None
    dtype = config.dtype.newbyteorder("<")
    expected = expected_shapes(config)
    (count,) = rd.unpack("<I", "n_arrays")
    arrays = {}
    for i in range(count):
        (name_len,) = rd.unpack("<H", f"array[{i}].name_len")
        try:
            name = rd.take(name_len, f"array[{i}].name").decode("utf-8")
        except UnicodeDecodeError:
            raise WeightFormatError(f"array[{i}].name", "not valid utf-8") from None
        (ndim,) = rd.unpack("<B", f"{name}.ndim")
        shape = rd.unpack(f"<{ndim}I", f"{name}.shape")
        if name not in expected:
            raise WeightFormatError(name, "unexpected array name")
        if tuple(shape) != expected[name]:
            raise WeightFormatError(name, f"shape {tuple(shape)} != expected {expected[name]}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * itemsize
        data = rd.take(nbytes, f"{name}.data")
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).astype(config.dtype)
    missing = expected.keys() - arrays.keys()
    if missing:
        raise WeightFormatError(sorted(missing)[0], "array missing from file")
    if rd.pos != len(rd.buf):
        raise WeightFormatError("trailer", f"{len(rd.buf) - rd.pos} unexpected trailing bytes")
    return WeightSet(config, {n: arrays[n] for n in expected})


# Token layout used by init_tilt_weights.
_X, _Y, _HI, _LO, _REF, _EST, _CLS = 0, 1, 2, 3, 5, 6, 7
_ANCHOR = 1000.0


def init_tilt_weights(config: ModelConfig, num_features: int, tilt=0.5, jitter=1e-3) -> WeightSet:
    """Weights under which one forward pass acts as an in-context regressor.

    Without training, random weights carry no inductive bias toward the
    labels, so this init wires one up by hand. In layer 0, head 0 of the
    item attention scores train cell ``x_ij`` against test cell ``x*_j`` as
    ``tilt * x*_j * x_ij`` and averages the train labels under those softmax
    weights. For standardized, independent Gaussian features and a linear
    target this average tends to ``tilt * w_j * x*_j`` as the context grows;
    the head sums the ``num_features`` per-feature estimates back into
    ``w . x*``. Classification averages one-hot labels the same way.

    Two large constant channels keep every layer norm close to a fixed
    rescale. All remaining layers are near-identity. ``jitter`` scales a
    seeded N(0, 1/d_model) perturbation added to every matrix.
    """
    d, dk = config.d_model, config.d_k
    n_cls = 0 if config.is_regression else config.num_classes
    if d < _CLS + 2 * n_cls or d < _EST + 1:
        raise ConfigError(f"d_model={d} too small for the tilt layout with {n_cls} classes")
    if dk < max(1, n_cls):
        raise ConfigError(f"d_k={dk} must be >= number of label channels")
    if num_features < 1:
        raise ConfigError("num_features must be >= 1")

    w = init_weights(config)
    arrays = {}
    for name, arr in w.arrays.items():
        base = arr if name.endswith((".ln_g", ".ln_b")) else arr * jitter
        arrays[name] = np.array(base, dtype=np.float64)

    # layer-norm std of a token that is zero apart from the anchors
    sigma = _ANCHOR * np.sqrt(2.0 / d)
    arrays["embed.x_w"][_X] += 1.0
    arrays["embed.x_b"][_HI] += _ANCHOR
    arrays["embed.x_b"][_LO] -= _ANCHOR
    if config.is_regression:
        arrays["embed.y_w"][_Y] += 1.0
        label_dims = [_Y]
        est_dims = [_EST]
    else:
        label_dims = [_CLS + c for c in range(n_cls)]
        est_dims = [_CLS + n_cls + c for c in range(n_cls)]
        arrays["embed.label"][np.arange(n_cls), label_dims] += 1.0

    # reading (h[dim] - h[_REF]) cancels the layer-norm mean exactly
    qk = sigma * dk ** 0.25 * np.sqrt(tilt)
    p = "layers.0.items"
    for mat in ("wq", "wk"):
        arrays[f"{p}.{mat}"][_X, 0] += qk
        arrays[f"{p}.{mat}"][_REF, 0] -= qk
    for j, (src, dst) in enumerate(zip(label_dims, est_dims)):
        arrays[f"{p}.wv"][src, j] += sigma
        arrays[f"{p}.wv"][_REF, j] -= sigma
        arrays[f"{p}.wo"][j, dst] += 1.0

    gain = sigma * num_features / tilt
    for j, dst in enumerate(est_dims):
        arrays["head.w"][dst, j] += gain
        arrays["head.w"][_REF, j] -= gain
    return WeightSet(config, {n: a.astype(config.dtype) for n, a in arrays.items()})
