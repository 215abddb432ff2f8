# coding: utf-8

# # Scaling the context past the monolithic budget
#
# `run_scaling` evaluates one synthetic task at growing context lengths with
# both the monolithic and the tiled model. When the full score matrix would
# not fit in the memory budget the monolithic run is skipped and recorded as
# "budget-exceeded"; the tiled run carries on.

# In[1]:

import os
import tempfile

from tilepfn import SyntheticTaskSpec, TileConfig, run_scaling, write_records

spec = SyntheticTaskSpec(seed=0, n_total=2048, m=64, p=8)
records = run_scaling(spec, [16, 128, 512, 2048], tiles=TileConfig(256, 512, 2),
                      budget_bytes=16 * 2**20)


# In[2]:

for r in records:
    print("%-5d %-10s %-16s %s" % (r.context_length, r.variant, r.status,
                                   "%.4f" % r.metric_value if r.status == "ok" else "-"))


# The same records as CSV, and `plot_records` (needs matplotlib) turns them
# into an SVG.

# In[3]:

path = os.path.join(tempfile.mkdtemp(), "scaling.csv")
write_records(records, path)
print(open(path).read(), end="")
