import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tilepfn.attention import TileConfig
from tilepfn.bench import (BUDGET_EXCEEDED, FIELDS, ScalingRecord, SyntheticTaskSpec,
                           context_order, gen_task, monolithic_score_bytes, plot_records,
                           read_records, run_scaling, target_fn, write_records)
from tilepfn.errors import ConfigError, DegenerateNormalizationError, UndefinedMetricError
from tilepfn.metrics import auc, normalized_rmse, rmse


def auc_pairs(scores, labels):
    """AUC by enumerating every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# --- metrics -------------------------------------------------------------

def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc_pairs([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.5, 0.5], [0, 1]) == 0.5


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), st.integers(0, 1)),
                min_size=2, max_size=30))
@settings(max_examples=200, deadline=None)
def test_auc_matches_pair_enumeration(pairs):
    scores, labels = zip(*pairs)
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)


def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse(np.arange(5) + 1.0, np.arange(5)) == 1.0
    assert rmse([1, 2], [3, 2]) == math.sqrt(2)
    with pytest.raises(ValueError):
        rmse([1, 2], [1])


def test_normalized_rmse():
    assert normalized_rmse([3.0]) == [1.0]
    assert normalized_rmse([2, 4]) == [0.5, 1.0]
    assert normalized_rmse({"a": 3, "b": 6, "c": 2}) == {"a": 0.5, "b": 1.0, "c": 1 / 3}
    with pytest.raises(DegenerateNormalizationError):
        normalized_rmse([0, 0])


# --- task generation -----------------------------------------------------

def test_gen_task_deterministic():
    spec = SyntheticTaskSpec(seed=5, n_total=50, m=10, p=3, kind="piecewise", noise_std=0.3)
    a, b = gen_task(spec), gen_task(spec)
    for field in ("train_x", "train_y", "test_x", "test_y"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_noise_free_linear_duplicate_rows():
    spec = SyntheticTaskSpec(seed=1, n_total=20, m=5, p=4)
    task = gen_task(spec)
    f = target_fn(spec)
    doubled = np.concatenate([task.train_x, task.train_x])
    y = f(doubled)
    assert np.array_equal(y[:20], y[20:])
    assert np.array_equal(y[:20], task.train_y)


def test_logistic_large_weights_follow_sign():
    spec = SyntheticTaskSpec(seed=2, n_total=300, m=50, p=5, kind="logistic-classification",
                             weight_scale=1e6)
    task = gen_task(spec)
    score = target_fn(spec)(task.train_x)
    for label, s in zip(task.train_y, score):
        assert label == (1 if s > 0 else 0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(kind="spiral")
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(noise_std=-1)


# --- run_scaling ---------------------------------------------------------

def test_both_variants_agree():
    spec = SyntheticTaskSpec(seed=0, n_total=32, m=16, p=4)
    recs = run_scaling(spec, [32], tiles=TileConfig(8, 8))
    assert [r.variant for r in recs] == ["monolithic", "chunked"]
    assert abs(recs[0].metric_value - recs[1].metric_value) < 1e-4


def test_classification_reports_auc():
    spec = SyntheticTaskSpec(seed=3, n_total=64, m=40, p=4, kind="logistic-classification")
    recs = run_scaling(spec, [16, 64], tiles=TileConfig(8, 8))
    assert {r.metric_name for r in recs} == {"auc"}
    assert all(0 <= r.metric_value <= 1 for r in recs)


def test_budget_exceeded_record():
    spec = SyntheticTaskSpec(seed=0, n_total=64, m=8, p=4)
    budget = 1000
    assert monolithic_score_bytes(64, 8, 4, 4) > budget
    recs = run_scaling(spec, [64], tiles=TileConfig(16, 16), budget_bytes=budget)
    mono, chunked = recs
    assert mono.status == BUDGET_EXCEEDED and math.isnan(mono.metric_value)
    assert chunked.status == "ok" and math.isfinite(chunked.metric_value)


def test_more_context_helps_on_linear_task():
    spec = SyntheticTaskSpec(seed=0, n_total=512, m=256, p=8)
    recs = run_scaling(spec, [8, 64, 512], tiles=TileConfig(64, 64), variants=("chunked",))
    values = [r.metric_value for r in recs]
    assert values == sorted(values, reverse=True)


def test_length_validation():
    spec = SyntheticTaskSpec(n_total=10)
    with pytest.raises(ConfigError):
        run_scaling(spec, [8, 4])
    with pytest.raises(ConfigError):
        run_scaling(spec, [11])


def test_contexts_are_prefixes_of_one_shuffle():
    spec = SyntheticTaskSpec(seed=4, n_total=100, m=5, p=2)
    task = gen_task(spec)
    order = context_order(spec)
    small = task.subset(train_idx=order[:10])
    large = task.subset(train_idx=order[:60])
    assert np.array_equal(small.train_x, large.train_x[:10])
    assert np.array_equal(order, context_order(spec))


def test_records_deterministic_except_timing():
    spec = SyntheticTaskSpec(seed=9, n_total=40, m=10, p=3)
    a = run_scaling(spec, [10, 40], tiles=TileConfig(8, 8))
    b = run_scaling(spec, [10, 40], tiles=TileConfig(8, 8))
    strip = lambda rs: [{f: getattr(r, f) for f in FIELDS if f != "wallclock_seconds"} for r in rs]
    assert strip(a) == strip(b)


# --- CSV -----------------------------------------------------------------

def _records():
    return [ScalingRecord("d", 8, "chunked", 4, 8, None, "rmse", 0.1 + 1e-17, 0.5, 1024, 0),
            ScalingRecord("d", 8, "monolithic", None, None, None, "rmse", 1 / 3, 0.25, None, 0),
            ScalingRecord("d", 16, "monolithic", None, None, None, "rmse", math.nan, 0.0, None, 0,
                          BUDGET_EXCEEDED)]


def test_empty_records_header_only(tmp_path):
    path = tmp_path / "r.csv"
    write_records([], path)
    assert path.read_text() == ",".join(FIELDS) + "\n"


def test_round_trip(tmp_path):
    path = tmp_path / "r.csv"
    write_records(_records(), path)
    back = read_records(path)
    assert back[:2] == _records()[:2]
    assert back[2].status == BUDGET_EXCEEDED and math.isnan(back[2].metric_value)


def test_append(tmp_path):
    path = tmp_path / "r.csv"
    write_records(_records()[:1], path)
    write_records(_records()[1:2], path, append=True)
    assert read_records(path) == _records()[:2]


def test_io_error_names_path(tmp_path):
    bad = tmp_path / "missing-dir" / "r.csv"
    with pytest.raises(OSError, match="missing-dir"):
        write_records(_records(), bad)


def test_same_seed_files_identical_modulo_wallclock(tmp_path):
    spec = SyntheticTaskSpec(seed=2, n_total=24, m=6, p=3)
    texts = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        write_records(run_scaling(spec, [12, 24], tiles=TileConfig(4, 4)), path)
        col = FIELDS.index("wallclock_seconds")
        rows = [line.split(",") for line in path.read_text().splitlines()]
        texts.append([r[:col] + r[col + 1:] for r in rows])
    assert texts[0] == texts[1]


def test_svg_plot(tmp_path):
    pytest.importorskip("matplotlib")
    path = tmp_path / "plot.svg"
    plot_records(_records(), path)
    assert path.read_text().lstrip().startswith("<?xml")
