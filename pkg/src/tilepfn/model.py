"""Miniature in-context tabular transformer.

Each (sample, feature) cell is one token. A layer runs, with pre-norm
residuals:

1. between-feature attention: batch = samples, sequence = features;
2. attention between items: train tokens attend over all train tokens
   (batch = features, sequence = n), and test tokens attend over the same
   train tokens (queries = m, keys/values = n) without seeing each other;
3. a GELU MLP.

The head mean-pools each test row's feature tokens. There is no positional
encoding on the sample axis, so predictions do not depend on train order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import TileConfig, attend
from .errors import ConfigError, InputValidationError
from .tensor import Tensor
from .weights import ModelConfig, WeightSet

LN_EPS = 1e-5


@dataclass(frozen=True)
class TabularTask:
    """Train rows with labels plus unlabeled test rows.

    ``num_classes=None`` marks a regression task. ``test_y`` is optional and
    only used for scoring.
    """

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    num_classes: int | None = None
    test_y: np.ndarray | None = None

    def __post_init__(self):
        tx = np.asarray(self.train_x, dtype=np.float64)
        sx = np.asarray(self.test_x, dtype=np.float64)
        ty = np.asarray(self.train_y)
        if tx.ndim != 2 or sx.ndim != 2:
            raise InputValidationError("train_x and test_x must be 2-D (rows x features)")
        n, p = tx.shape
        if n < 1 or p < 1 or sx.shape[0] < 1:
            raise InputValidationError(f"need n, m, p >= 1, got n={n}, m={sx.shape[0]}, p={p}")
        if sx.shape[1] != p:
            raise InputValidationError(f"test_x has {sx.shape[1]} features, train_x has {p}")
        if ty.shape != (n,):
            raise InputValidationError(f"train_y must have shape ({n},), got {ty.shape}")
        if not (np.isfinite(tx).all() and np.isfinite(sx).all()):
            raise InputValidationError("feature matrix contains NaN or inf")
        if self.num_classes is None:
            ty = ty.astype(np.float64)
            if not np.isfinite(ty).all():
                raise InputValidationError("regression targets contain NaN or inf")
        else:
            if not np.all(np.asarray(ty, dtype=np.float64) == np.round(ty)):
                raise InputValidationError("class labels must be integers")
            ty = ty.astype(np.int64)
            if ty.min() < 0 or ty.max() >= self.num_classes:
                raise InputValidationError(
                    f"class labels must lie in [0, {self.num_classes}), "
                    f"got range [{ty.min()}, {ty.max()}]")
        object.__setattr__(self, "train_x", tx)
        object.__setattr__(self, "test_x", sx)
        object.__setattr__(self, "train_y", ty)

    @property
    def n(self):
        return self.train_x.shape[0]

    @property
    def m(self):
        return self.test_x.shape[0]

    @property
    def p(self):
        return self.train_x.shape[1]

    @property
    def is_regression(self):
        return self.num_classes is None

    def subset(self, train_idx=None, test_idx=None):
        """Task restricted to the given train/test row indices, in that order."""
        tr = slice(None) if train_idx is None else np.asarray(train_idx)
        te = slice(None) if test_idx is None else np.asarray(test_idx)
        return TabularTask(self.train_x[tr], self.train_y[tr], self.test_x[te],
                           self.num_classes,
                           None if self.test_y is None else np.asarray(self.test_y)[te])


@dataclass(frozen=True)
class PredictiveDistribution:
    probs: np.ndarray | None = None  # (m, num_classes), rows sum to 1
    mean: np.ndarray | None = None  # (m,)

    @property
    def values(self):
        return self.mean if self.probs is None else self.probs


def _standardize(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + x.dtype.type(LN_EPS)) * g + b


def _gelu(x):
    c = x.dtype.type(np.sqrt(2.0 / np.pi))
    return x.dtype.type(0.5) * x * (1 + np.tanh(c * (x + x.dtype.type(0.044715) * x**3)))


def _heads(x, H):
    B, L, d = x.shape
    return Tensor(x.reshape(B, L, H, d // H).transpose(0, 2, 1, 3))


def _attention(xq, xkv, prefix, w, tiles, workers=1):
    """Multi-head attention of ``xq (B, Lq, d)`` over ``xkv (B, Lk, d)``."""
    H = w.config.num_heads
    q = _heads(xq @ w[f"{prefix}.wq"], H)
    k = _heads(xkv @ w[f"{prefix}.wk"], H)
    v = _heads(xkv @ w[f"{prefix}.wv"], H)
    o = attend(q, k, v, tiles, workers).numpy()
    B, _, Lq, _ = o.shape
    return o.transpose(0, 2, 1, 3).reshape(B, Lq, -1) @ w[f"{prefix}.wo"]


def embed(task: TabularTask, w: WeightSet):
    """Token grids ``(n, p, d_model)`` for train and ``(m, p, d_model)`` for test.

    Features are z-scored with train statistics and embedded per cell as
    ``x * x_w + x_b``. Train tokens add their label embedding, test tokens
    the learned missing-label embedding.
    """
    dt = w.config.dtype
    train_z, test_z = _standardize(task.train_x, task.test_x)
    x_w, x_b = w["embed.x_w"], w["embed.x_b"]
    train = train_z.astype(dt)[:, :, None] * x_w + x_b
    test = test_z.astype(dt)[:, :, None] * x_w + x_b
    if w.config.is_regression:
        y = task.train_y
        sd = y.std() if y.std() > 1e-12 else 1.0
        label = ((y - y.mean()) / sd).astype(dt)[:, None] * w["embed.y_w"]
    else:
        label = w["embed.label"][task.train_y]
    return train + label[:, None, :], test + w["embed.missing"]


def feature_attention_pass(tokens, w: WeightSet, tiles, layer=0, workers=1):
    """Cells of each sample attend among themselves (batch = samples, L = p)."""
    prefix = f"layers.{layer}.feat"
    h = _layer_norm(tokens, w[f"{prefix}.ln_g"], w[f"{prefix}.ln_b"])
    return tokens + _attention(h, h, prefix, w, tiles, workers)


def _by_feature(tokens):
    return np.ascontiguousarray(tokens.transpose(1, 0, 2))


def sample_self_attention_pass(train_tokens, w: WeightSet, tiles, layer=0, workers=1):
    """Train tokens attend over all train tokens of the same feature (batch = p, L = n)."""
    prefix = f"layers.{layer}.items"
    h = _by_feature(_layer_norm(train_tokens, w[f"{prefix}.ln_g"], w[f"{prefix}.ln_b"]))
    return train_tokens + _attention(h, h, prefix, w, tiles, workers).transpose(1, 0, 2)


def cross_attention_pass(test_tokens, train_tokens, w: WeightSet, tiles, layer=0, workers=1):
    """Test tokens attend over the train tokens (batch = p, L_q = m, L_k = n).

    Test rows never attend to each other, so each row's result is
    independent of which other test rows are present.
    """
    prefix = f"layers.{layer}.items"
    g, b = w[f"{prefix}.ln_g"], w[f"{prefix}.ln_b"]
    hq = _by_feature(_layer_norm(test_tokens, g, b))
    hkv = _by_feature(_layer_norm(train_tokens, g, b))
    return test_tokens + _attention(hq, hkv, prefix, w, tiles, workers).transpose(1, 0, 2)


def mlp_pass(tokens, w: WeightSet, layer=0):
    prefix = f"layers.{layer}.mlp"
    h = _layer_norm(tokens, w[f"{prefix}.ln_g"], w[f"{prefix}.ln_b"])
    h = _gelu(h @ w[f"{prefix}.w1"] + w[f"{prefix}.b1"])
    return tokens + h @ w[f"{prefix}.w2"] + w[f"{prefix}.b2"]


def _check_compatible(task: TabularTask, config: ModelConfig):
    if task.is_regression != config.is_regression:
        kind = "regression" if task.is_regression else "classification"
        raise ConfigError(f"{kind} task given to a model with num_classes={config.num_classes}")
    if not task.is_regression and task.num_classes != config.num_classes:
        raise ConfigError(
            f"task has {task.num_classes} classes, model head has {config.num_classes}")


def forward(task: TabularTask, w: WeightSet, tiles: TileConfig | None = TileConfig(),
            config: ModelConfig | None = None, workers=1) -> PredictiveDistribution:
    """Predictive distribution for ``task.test_x`` in one pass.

    ``tiles=None`` runs every attention call monolithically.
    """
    if config is not None and config != w.config:
        raise ConfigError("config does not match the weight set's config")
    config = w.config
    _check_compatible(task, config)
    train, test = embed(task, w)
    for layer in range(config.num_layers):
        train = feature_attention_pass(train, w, tiles, layer, workers)
        test = feature_attention_pass(test, w, tiles, layer, workers)
        new_train = sample_self_attention_pass(train, w, tiles, layer, workers)
        test = cross_attention_pass(test, train, w, tiles, layer, workers)
        train = mlp_pass(new_train, w, layer)
        test = mlp_pass(test, w, layer)

    pooled = _layer_norm(test, w["head.ln_g"], w["head.ln_b"]).mean(axis=1)
    out = pooled @ w["head.w"] + w["head.b"]
    if config.is_regression:
        y = task.train_y
        sd = y.std() if y.std() > 1e-12 else 1.0
        return PredictiveDistribution(mean=out[:, 0].astype(np.float64) * sd + y.mean())
    z = out.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictiveDistribution(probs=probs)
