"""Evaluation metrics for the scaling harness."""
import numpy as np

from .errors import DegenerateNormalizationError, UndefinedMetricError


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    # boundaries of runs of equal values
    edges = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [len(x)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def auc(scores, labels):
    """ROC AUC as the normalized Mann-Whitney U; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(preds, targets):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("rmse of empty input")
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def accuracy(probs, labels):
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def normalized_rmse(rmses):
    """Divide each method's RMSE by the worst one, mapping ``{name: rmse}`` or a sequence."""
    keys = list(rmses) if isinstance(rmses, dict) else None
    values = np.asarray(list(rmses.values()) if keys is not None else rmses, dtype=np.float64)
    if values.size == 0:
        raise ValueError("need at least one method")
    if (values < 0).any():
        raise ValueError("RMSE values must be non-negative")
    worst = values.max()
    if worst == 0:
        raise DegenerateNormalizationError("all RMSEs are zero")
    out = values / worst
    return dict(zip(keys, out.tolist())) if keys is not None else out.tolist()
