# coding: utf-8

# # Tiled attention is exact
#
# The tiled kernel folds key/value tiles into a running (max, sum, weighted
# sum) state instead of building the whole logits matrix. Here we check it
# against a float64 reference on a handful of shapes and tile sizes.

# In[1]:

import numpy as np

from tilepfn import TileConfig, chunked_attention, fill_random, reference_attention


def rel_err(got, ref):
    got, ref = got.numpy().astype(np.float64), ref.numpy()
    return np.max(np.abs(got - ref) / np.maximum(1.0, np.abs(ref)))


# A random query/key/value triple. `fill_random` is seeded, so every run of
# this script sees the same numbers.

# In[2]:

B, H, L_q, L_k, d_k = 2, 2, 48, 500, 16
q = fill_random((B, H, L_q, d_k), seed=0)
k = fill_random((B, H, L_k, d_k), seed=1)
v = fill_random((B, H, L_k, d_k), seed=2)
ref = reference_attention(q, k, v)
print(ref.shape, ref.dtype)


# Sweep a few tile sizes. Unit tiles are the harshest case: every key is its
# own merge step.

# In[3]:

for ell, r in [(1, 1), (7, 13), (16, 64), (48, 500)]:
    out = chunked_attention(q, k, v, TileConfig(query_tile=ell, kv_tile=r))
    print("l=%3d r=%3d  max rel err %.2e" % (ell, r, rel_err(out, ref)))


# In double precision the error falls to round-off level.

# In[4]:

qd, kd, vd = (t.astype("double") for t in (q, k, v))
out = chunked_attention(qd, kd, vd, TileConfig(5, 37))
print("double: %.2e" % rel_err(out, reference_attention(qd, kd, vd)))
