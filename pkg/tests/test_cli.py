import io

import numpy as np
import pytest

from tilepfn.bench import BUDGET_EXCEEDED, read_records
from tilepfn.cli import build_parser, main
from tilepfn.weights import ModelConfig, init_weights, save_weights


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return str(path)


# --- check ---------------------------------------------------------------

def test_check_defaults_pass():
    code, out, _ = run("check")
    assert code == 0
    assert "max_relative_error=" in out and out.strip().endswith("seed=0")


def test_check_unit_tiles_pass():
    code, out, _ = run("check", "--kv-tile", "1", "--query-tile", "1", "--lq", "8", "--lk", "64")
    assert code == 0, out


def test_check_double_precision():
    assert run("check", "--precision", "double", "--kv-tile", "100", "--query-tile", "50")[0] == 0


def test_check_negative_control_fails():
    code, out, _ = run("check", "--kv-tile", "7", "--inject-fault")
    assert code == 1
    assert "FAIL" in out and "r=7" in out


def test_check_bad_tile_is_an_error():
    code, _, err = run("check", "--kv-tile", "0")
    assert code == 2 and "kv_tile" in err


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as info:
        main(["check", "--bogus"])
    assert info.value.code == 2


def test_help_documents_defaults():
    text = build_parser()._subparsers._group_actions[0].choices["check"].format_help()
    assert "default: 512" in text and "default: 2048" in text


# --- bench ---------------------------------------------------------------

def test_bench_rows(tmp_path):
    out = tmp_path / "r.csv"
    code, _, _ = run("bench", "--lengths", "64,256", "--out", str(out))
    assert code == 0
    recs = read_records(out)
    assert len(recs) == 4
    assert {(r.context_length, r.variant) for r in recs} == {
        (64, "monolithic"), (64, "chunked"), (256, "monolithic"), (256, "chunked")}


def test_bench_tiny_budget(tmp_path):
    out = tmp_path / "r.csv"
    assert run("bench", "--lengths", "16,32", "--m", "8", "--budget-bytes", "1024",
               "--out", str(out))[0] == 0
    mono = [r for r in read_records(out) if r.variant == "monolithic"]
    assert len(mono) == 2 and all(r.status == BUDGET_EXCEEDED for r in mono)


def test_bench_repeatable(tmp_path):
    cols = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        run("bench", "--lengths", "16,48", "--m", "16", "--seed", "3", "--out", str(out),
            "--deterministic")
        cols.append([(r.metric_name, r.metric_value) for r in read_records(out)])
    assert cols[0] == cols[1]


def test_bench_svg_and_errors(tmp_path):
    pytest.importorskip("matplotlib")
    svg = tmp_path / "p.svg"
    assert run("bench", "--lengths", "16", "--m", "8", "--out", str(tmp_path / "r.csv"),
               "--svg", str(svg))[0] == 0
    assert svg.exists()
    code, _, err = run("bench", "--lengths", "64,16", "--out", str(tmp_path / "x.csv"))
    assert code == 2 and "ascending" in err
    code, _, err = run("bench", "--lengths", "16", "--out", str(tmp_path / "no" / "x.csv"))
    assert code == 2 and "no" in err


# --- predict -------------------------------------------------------------

@pytest.fixture
def small_csvs(tmp_path):
    train = write_csv(tmp_path / "train.csv", ["a", "b", "y"],
                      [[0.1, 1.0, 0], [0.5, -1.0, 1], [2.0, 0.3, 1]])
    test = write_csv(tmp_path / "test.csv", ["a", "b"], [[0.2, 0.2], [1.5, -0.7]])
    return train, test


def _read_out(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(x) for x in l.split(",")] for l in lines[1:]])


def test_predict_classification(tmp_path, small_csvs):
    train, test = small_csvs
    out = tmp_path / "pred.csv"
    assert run("predict", "--train", train, "--test", test, "--out", str(out))[0] == 0
    header, probs = _read_out(out)
    assert header == ["p0", "p1"]
    assert probs.shape == (2, 2)
    assert np.max(np.abs(probs.sum(axis=1) - 1)) < 1e-6


def test_predict_tile_independent(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 3))
    train = write_csv(tmp_path / "tr.csv", ["a", "b", "c", "y"],
                      np.column_stack([X[:30], X[:30].sum(axis=1)]).tolist())
    test = write_csv(tmp_path / "te.csv", ["a", "b", "c"], X[30:].tolist())
    outs = []
    for extra in ([], ["--kv-tile", "4"]):
        out = tmp_path / f"p{len(extra)}.csv"
        assert run("predict", "--task", "regression", "--train", train, "--test", test,
                   "--out", str(out), *extra)[0] == 0
        outs.append(_read_out(out)[1])
    assert np.max(np.abs(outs[0] - outs[1]) / np.maximum(1, np.abs(outs[0]))) < 1e-4


def test_predict_wrong_column_count_names_line(tmp_path, small_csvs):
    train, _ = small_csvs
    test = tmp_path / "bad.csv"
    test.write_text("a,b\n0.1,0.2\n0.3,0.4,0.5\n")
    code, _, err = run("predict", "--train", train, "--test", str(test))
    assert code == 2 and "line 3" in err


def test_predict_non_numeric_names_line(tmp_path, small_csvs):
    _, test = small_csvs
    train = tmp_path / "bad.csv"
    train.write_text("a,b,y\n0.1,0.2,1\n0.1,oops,0\n")
    code, _, err = run("predict", "--train", str(train), "--test", test)
    assert code == 2 and "line 3" in err


def test_predict_with_weight_file_and_label_mismatch(tmp_path, small_csvs):
    train, test = small_csvs
    wpath = tmp_path / "w.bin"
    save_weights(init_weights(ModelConfig(d_model=16, num_heads=2, num_layers=1)), wpath)
    code, out, _ = run("predict", "--train", train, "--test", test, "--weights", str(wpath))
    assert code == 0 and out.startswith("p0,p1")
    bad = write_csv(tmp_path / "tr3.csv", ["a", "b", "y"], [[0.1, 1.0, 0], [0.5, -1.0, 2]])
    code, _, err = run("predict", "--train", bad, "--test", test, "--weights", str(wpath))
    assert code == 2 and "classes" in err


def test_predict_deterministic(small_csvs):
    train, test = small_csvs
    a = run("predict", "--train", train, "--test", test, "--deterministic")[1]
    b = run("predict", "--train", train, "--test", test, "--deterministic")[1]
    assert a == b
