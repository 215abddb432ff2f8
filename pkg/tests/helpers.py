import numpy as np

from tilepfn.tensor import fill_random


def max_rel_err(got, ref):
    """max |got - ref| / max(1, |ref|), elementwise, in float64."""
    got = np.asarray(got.numpy() if hasattr(got, "numpy") else got, dtype=np.float64)
    ref = np.asarray(ref.numpy() if hasattr(ref, "numpy") else ref, dtype=np.float64)
    return float(np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref))))


def qkv(B, H, L_q, L_k, d_k, seed=0, dtype="single"):
    return (fill_random((B, H, L_q, d_k), 3 * seed, dtype),
            fill_random((B, H, L_k, d_k), 3 * seed + 1, dtype),
            fill_random((B, H, L_k, d_k), 3 * seed + 2, dtype))
