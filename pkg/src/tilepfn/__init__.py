"""Exact tiled attention with streaming log-sum-exp merging, inside a
miniature in-context tabular transformer."""
from .attention import (FlopReport, MergeState, TileConfig, attend, chunked_attention,
                        flop_count, lse_merge_step, merge_states, monolithic_attention,
                        reference_attention)
from .bench import (ScalingRecord, SyntheticTaskSpec, gen_task, read_records, run_scaling,
                    write_records)
from .memory import MemoryReport, analytic_peak, measure_attention, with_tracking
from .metrics import auc, normalized_rmse, rmse
from .model import PredictiveDistribution, TabularTask, forward
from .tensor import Seed, Tensor, fill_random
from .weights import (ModelConfig, WeightSet, init_tilt_weights, init_weights, load_weights,
                      save_weights)

__version__ = "0.1.0"
