import csv
import json

import numpy as np
import pytest

from neqx.cli import main
from neqx.data import read_ivecs, read_vecs
from neqx.evaluation import brute_force_topk
from neqx.storage import deserialize_index


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 600, "--d", 8, "--profile", "longtail", "--seed", 1, "--out", d / "base.fvecs") == 0
    assert run("synth", "--n", 30, "--d", 8, "--profile", "longtail", "--seed", 2, "--out", d / "q.fvecs") == 0
    assert run("gt", "--data", d / "base.fvecs", "--queries", d / "q.fvecs", "--topk", 10,
               "--out", d / "gt.ivecs") == 0
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_and_gt(files):
    X = read_vecs(files / "base.fvecs")
    Q = read_vecs(files / "q.fvecs")
    assert X.shape == (600, 8) and Q.shape == (30, 8)
    assert np.array_equal(read_ivecs(files / "gt.ivecs"), brute_force_topk(X, Q, 10))


@pytest.mark.parametrize("extra", [[], ["--norm-explicit"]])
def test_train_eval_pipeline(files, extra):
    idx = files / f"idx{len(extra)}.neqx"
    assert run("train", "--quantizer", "rq", *extra, "--m", 4, "--k", 16, "--data", files / "base.fvecs",
               "--out", idx) == 0
    model, codes = deserialize_index(idx)
    assert codes.shape == (600, 4)
    out = files / f"curve{len(extra)}.csv"
    assert run("eval", "--index", idx, "--queries", files / "q.fvecs", "--gt", files / "gt.ivecs",
               "--topk", 10, "--checkpoints", "10,100,600", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["T", "mean_recall", "stddev"] and len(rows) == 4
    assert float(rows[-1][1]) == 1.0
    meta = json.loads(out.with_suffix(".json").read_text())
    assert meta["checkpoints"] == [10, 100, 600] and meta["kind"] == model.kind


def test_encode_appends(files, tmp_path):
    idx = tmp_path / "pq.neqx"
    assert run("train", "--quantizer", "pq", "--m", 2, "--k", 8, "--data", files / "base.fvecs", "--out", idx) == 0
    assert run("encode", "--index", idx, "--data", files / "q.fvecs") == 0
    model, codes = deserialize_index(idx)
    assert codes.shape[0] == 630
    assert np.array_equal(codes[600:], model.encode(read_vecs(files / "q.fvecs")))


@pytest.mark.parametrize("kind", ["vq", "neq"])
def test_imi_search(files, tmp_path, kind):
    out = tmp_path / "hits.csv"
    flags = ["--early-stop"] if kind == "neq" else []
    assert run("imi-search", "--data", files / "base.fvecs", "--queries", files / "q.fvecs", "--kind", kind,
               "--k", 8, "--budget", 600, "--topk", 5, *flags, "--out", out) == 0
    rows = read_csv(out)[1:]
    assert len(rows) == 30 * 5
    truth = read_ivecs(files / "gt.ivecs")[:, :5]
    got = np.array([int(r[2]) for r in rows]).reshape(30, 5)
    assert np.array_equal(got, truth)


def test_analyze(files, tmp_path):
    idx = tmp_path / "a.neqx"
    run("train", "--quantizer", "pq", "--m", 4, "--k", 16, "--data", files / "base.fvecs", "--out", idx)
    assert run("analyze", "--index", idx, "--data", files / "base.fvecs", "--queries", files / "q.fvecs",
               "--topk", 10, "--samples", 2000, "--out", tmp_path / "an") == 0
    summary = json.loads((tmp_path / "an" / "analysis.json").read_text())
    assert summary["angle_bound"]["violations_inside"] == 0
    assert summary["angle_bound"]["violations_above"] >= 1
    assert abs(summary["error_study"]["slope_norm"] - 1.0) < 1e-9
    assert (tmp_path / "an" / "error_study.csv").exists()


def test_select_mprime(files, capsys):
    assert run("select-mprime", "--quantizer", "rq", "--m", 3, "--k", 8, "--data", files / "base.fvecs",
               "--queries", files / "q.fvecs", "--topk", 5, "--budget", 50) == 0
    assert capsys.readouterr().out.strip() in ("1", "2")


CONFIG = """# small experiment
synth_n = 500
synth_d = 8
n_queries = 20
quantizers = pq, ne-pq
m = 4
k = 16
topk = 10
checkpoints = 10, 50, 100
"""


def test_config_experiment_reproducible(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CONFIG)
    for name in ("a", "b"):
        assert run("eval", "--config", cfg, "--out", tmp_path / name) == 0
    for f in ("curve_pq.csv", "curve_ne-pq.csv", "errors_pq.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["checkpoints"] == [10, 50, 100]
    assert set(manifest["curves"]) == {"pq", "ne-pq"}
    assert manifest["figures"] == ["recall_curves.png", "norm_hist.png"]
    assert (tmp_path / "a" / "recall_curves.png").read_bytes()[:4] == b"\x89PNG"
    assert len(read_csv(tmp_path / "a" / "curve_pq.csv")) == 4


def test_config_repetitions(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CONFIG + "repetitions = 3\nfigures = false\nerror_study = false\n")
    assert run("eval", "--config", cfg, "--quantizers", "pq", "--out", tmp_path / "r") == 0
    rows = read_csv(tmp_path / "r" / "curve_pq.csv")[1:]
    assert any(float(r[2]) > 0 for r in rows)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("m = 4\nbogus = 1\nalso_bad = 2\n")
    assert run("eval", "--config", cfg, "--out", tmp_path / "x") == 1
    assert "also_bad, bogus" in capsys.readouterr().err


@pytest.mark.parametrize("argv,code", [
    ([], 2),
    (["nope"], 2),
    (["synth", "--n", "5"], 2),
    (["train", "--quantizer", "pq", "--data", "/no/such/file", "--out", "x"], 2),
    (["eval", "--index", "x"], 2),
    (["--version"], 0),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code


def test_corrupt_index_exit_code(files, tmp_path, capsys):
    bad = tmp_path / "bad.neqx"
    bad.write_bytes(b"NEQX" + b"\0" * 10)
    assert run("encode", "--index", bad, "--data", files / "q.fvecs") == 1
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "neqx", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("neqx ")
