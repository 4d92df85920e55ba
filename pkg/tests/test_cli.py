import csv
import json

import numpy as np
import pytest

from hgpool import autodiff as ad
from hgpool import gradcheck
from hgpool.cli import INPUT_ERROR, NUMERICAL, OK, VERIFY_FAILED, main
from hgpool.data import load_dataset
from hgpool.graphs import GRAPH_KINDS, read_adjacency

TINY = {
    "window": 6, "epochs": 2, "patience": None, "batch_size": 8, "horizons": [1],
    "graphs": ["Topo"], "models": ["GCN"], "som": {"epochs": 2},
    "model": {"GCN": {"hidden": 8, "mlp_hidden": 16}, "DiffPool": {"hidden": 8, "mlp_hidden": 16}},
}


@pytest.fixture
def dataset(tmp_path):
    d = tmp_path / "data"
    assert main(["synth", "--n", "6", "--days", "4", "--seed", "3", "--out", str(d)]) == OK
    return d


@pytest.fixture
def config(tmp_path, dataset):
    raw = dict(TINY, data={"signals": str(dataset / "signals.csv"),
                           "topology": str(dataset / "topology.csv"),
                           "lengths": str(dataset / "lengths.csv")})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


def test_synth_files(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["synth", "--n", "30", "--days", "14", "--seed", "2", "--out", str(out)]) == OK
    rows = list(csv.reader((out / "signals.csv").open()))[1:]
    per_road = {}
    for r in rows:
        per_road[r[1]] = per_road.get(r[1], 0) + 1
    assert len(per_road) == 30 and set(per_road.values()) == {336}
    tensor, topo = load_dataset(out / "signals.csv", out / "topology.csv", out / "lengths.csv")
    assert tensor.values.shape == (336, 30, 3) and topo.n == 30
    again = tmp_path / "s2"
    main(["synth", "--n", "30", "--days", "14", "--seed", "2", "--out", str(again)])
    for name in ("signals.csv", "topology.csv", "lengths.csv"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_synth_rejects_bad_sizes(tmp_path, capsys):
    assert main(["synth", "--n", "1", "--out", str(tmp_path)]) == INPUT_ERROR
    assert main(["synth", "--days", "1", "--out", str(tmp_path)]) == INPUT_ERROR
    assert "--n" in capsys.readouterr().err


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HGP_OUT_DIR", str(tmp_path / "env"))
    assert main(["synth", "--n", "3", "--days", "2"]) == OK
    assert (tmp_path / "env" / "signals.csv").exists()


def test_build_graphs(tmp_path, config, capsys):
    a, b = tmp_path / "g1", tmp_path / "g2"
    assert main(["build-graphs", "--config", str(config), "--set", 'graphs=["Topo","Geo","HistPatt","Attr"]',
                 "--out", str(a)]) == OK
    table = capsys.readouterr().out
    main(["build-graphs", "--config", str(config), "--set", 'graphs=["Topo","Geo","HistPatt","Attr"]',
          "--out", str(b)])
    for kind in GRAPH_KINDS:
        assert kind in table
        w = read_adjacency(a / f"adjacency_{kind}.csv").adjacency
        np.testing.assert_array_equal(w, w.T)
    files = sorted(p.name for p in a.iterdir())
    assert len(files) >= 4
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_missing_lengths_file(tmp_path, config, dataset, capsys):
    (dataset / "lengths.csv").unlink()
    assert main(["build-graphs", "--config", str(config), "--out", str(tmp_path / "o")]) == INPUT_ERROR
    assert "lengths.csv" in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, config, capsys):
    assert main(["train", "--config", str(config), "--set", "epochz=3",
                 "--out", str(tmp_path / "o")]) == INPUT_ERROR
    assert "epochz" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == INPUT_ERROR
    assert main(["train", "--config", str(tmp_path / "none.json")]) == INPUT_ERROR


def test_grade(tmp_path, config, capsys):
    out = tmp_path / "gr"
    assert main(["grade", "--config", str(config), "--out", str(out)]) == OK
    shares = capsys.readouterr().out
    assert shares.count("\n") >= 6
    codebook = (out / "codebook.json").read_bytes()
    main(["grade", "--config", str(config), "--out", str(out)])
    assert (out / "codebook.json").read_bytes() == codebook

    one = tmp_path / "one"
    assert main(["grade", "--config", str(config), "--set", "n_classes=1", "--out", str(one)]) == OK
    rows = list(csv.reader((one / "grades.csv").open()))
    assert {r[-1] for r in rows[1:]} == {"1"}

    assert main(["grade", "--config", str(config), "--set", "n_classes=20",
                 "--out", str(tmp_path / "many")]) == INPUT_ERROR


def test_train_evaluate_report(tmp_path, config, capsys):
    run_a, run_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(config), "--out", str(run_a)]) == OK
    assert main(["train", "--config", str(config), "--set", "seed=5", "--out", str(run_b)]) == OK
    metrics = json.loads((run_a / "metrics.json").read_text())
    cell = metrics["GCN"]["Topo"]["1"]
    assert 0 <= cell["acc"] <= 1 and "train_acc" in cell
    ckpt = run_a / "checkpoints" / "GCN_Topo_h1.json"
    assert ckpt.exists()

    ev = tmp_path / "ev"
    assert main(["evaluate", str(ckpt), "--config", str(config), "--out", str(ev)]) == OK
    again = json.loads((ev / "metrics.json").read_text())["GCN"]["Topo"]["1"]
    assert again["acc"] == cell["acc"] and again["kappa"] == cell["kappa"]

    rep = tmp_path / "rep"
    assert main(["report", str(run_a), str(run_b), "--out", str(rep)]) == OK
    rows = list(csv.reader((rep / "heatmap.csv").open()))
    assert len(rows) == 3  # header plus one row per run
    assert main(["report", str(tmp_path / "nothing"), "--out", str(rep)]) == INPUT_ERROR


def test_diverging_training_exits_3(tmp_path, config, capsys):
    out = tmp_path / "div"
    code = main(["train", "--config", str(config), "--set", "optimizer.lr=1e6",
                 "--set", "epochs=30", "--out", str(out)])
    assert code == NUMERICAL
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "diverged" in diag["failures"][0]["error"]


def test_gradcheck_clean_build(capsys):
    assert main(["gradcheck"]) == OK
    table = capsys.readouterr().out
    for name in gradcheck.CHECKS:
        assert name in table
    assert "FAIL" not in table


def test_gradcheck_detects_corrupted_gradient(monkeypatch, capsys):
    real = ad.matmul

    def bad_matmul(a, b):
        out = real(a, b)
        if out._backward is not None:
            fn = out._backward
            out._backward = lambda g: tuple(None if x is None else 1.01 * x for x in fn(g))
        return out

    monkeypatch.setattr(ad, "matmul", bad_matmul)
    assert main(["gradcheck"]) == VERIFY_FAILED
    assert "FAIL" in capsys.readouterr().out
