# coding: utf-8

# # Peak memory depends on the tiles, not on the context
#
# Every buffer the kernel allocates is registered with a tracker while
# `measure_attention` runs. The transient peak (everything except the output)
# should stay flat as the key length grows, and shrink with the kv tile.

# In[1]:

from tilepfn import TileConfig, fill_random, measure_attention


def inputs(L_k, L_q=256, d_k=16):
    return (fill_random((1, 2, L_q, d_k), 0), fill_random((1, 2, L_k, d_k), 1),
            fill_random((1, 2, L_k, d_k), 2))


# Fixed tiles (l=64, r=256), growing context.

# In[2]:

tiles = TileConfig(64, 256)
print("L_k     transient  analytic")
for L_k in (1024, 2048, 4096, 8192, 16384):
    _, rep = measure_attention(*inputs(L_k), tiles)
    print("%-7d %-10d %d" % (L_k, rep.transient_peak_bytes, rep.analytic_peak_bytes))


# Fixed context (8K keys), growing kv tile. The logits tile is l x r, so the
# peak grows roughly linearly in r.

# In[3]:

q, k, v = inputs(8192)
for r in (64, 256, 1024, 4096):
    _, rep = measure_attention(q, k, v, TileConfig(64, r))
    print("r=%-5d transient peak %d bytes" % (r, rep.transient_peak_bytes))


# The report also renders as a CSV row, handy for collecting sweeps.

# In[4]:

print(rep.to_csv(), end="")
