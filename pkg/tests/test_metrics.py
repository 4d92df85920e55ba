import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hgpool.metrics import (ConfusionMatrix, EvalReport, accuracy, aggregate_runs, confusion,
                            emit_report, heatmap_rows, metrics_tree, qw_kappa)


def kappa_oracle(counts):
    """Direct double-sum evaluation of the weighted agreement ratio."""
    counts = np.asarray(counts, dtype=float)
    C = counts.shape[0]
    total = counts.sum()
    po = pe = 0.0
    for i in range(C):
        for j in range(C):
            w = 1 - ((i - j) / (C - 1)) ** 2
            po += w * counts[i, j] / total
            pe += w * (counts[i, :].sum() / total) * (counts[:, j].sum() / total)
    if pe >= 1:
        return 1.0 if po >= 1 else 0.0
    return (po - pe) / (1 - pe)


def test_confusion_examples():
    cm = confusion([1, 1, 2], [1, 2, 2], 2)
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    assert np.count_nonzero(confusion([1, 2, 3], [1, 2, 3], 3).counts - np.diag([1, 1, 1])) == 0
    with pytest.raises(ValueError):
        confusion([], [], 3)
    with pytest.raises(ValueError):
        confusion([1, 4], [1, 1], 3)


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 1], [2, 2]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 1, 1]) == 0.5
    with pytest.raises(ValueError):
        accuracy([], [])


def test_kappa_examples():
    assert qw_kappa(ConfusionMatrix(np.diag([3, 1, 4]))) == 1.0
    counts = [[2, 1, 0], [0, 2, 1], [0, 0, 3]]
    assert abs(qw_kappa(ConfusionMatrix(np.array(counts))) - kappa_oracle(counts)) < 1e-12
    # by hand: Po = 8.5/9, row marginals 1/3 each, column marginals (2,3,4)/9, Pe = 2/3
    assert qw_kappa(ConfusionMatrix(np.array(counts))) == pytest.approx(5 / 6, abs=1e-12)


def test_kappa_independence_is_zero():
    row, col = np.array([1, 2, 3]), np.array([2, 2, 2])
    cm = ConfusionMatrix(np.outer(row, col))
    assert abs(qw_kappa(cm)) < 1e-12


def test_kappa_degenerate_expected_agreement():
    # all mass on one cell: Pe = Po = 1
    assert qw_kappa(ConfusionMatrix(np.array([[5, 0], [0, 0]]))) == 1.0
    # everything true 1 predicted 2 in C=2: Pe = 0, ordinary case
    assert qw_kappa(ConfusionMatrix(np.array([[0, 5], [0, 0]]))) == 0.0


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_kappa_matches_oracle_and_bounds(C, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 6, size=(C, C))
    counts[0, 0] += 1
    cm = ConfusionMatrix(counts)
    k = qw_kappa(cm)
    assert abs(k - kappa_oracle(counts)) < 1e-12
    assert -1 - 1e-12 <= k <= 1 + 1e-12
    assert qw_kappa(ConfusionMatrix(counts * 7)) == pytest.approx(k, abs=1e-12)
    assert accuracy(*_expand(counts)) == pytest.approx(np.trace(counts) / counts.sum(), abs=1e-15)


def _expand(counts):
    true, pred = [], []
    for i, row in enumerate(counts):
        for j, c in enumerate(row):
            true += [i + 1] * int(c)
            pred += [j + 1] * int(c)
    return true, pred


@given(st.integers(2, 6), st.integers(0, 2**31))
def test_kappa_is_one_iff_diagonal(C, seed):
    rng = np.random.default_rng(seed)
    diag = np.diag(rng.integers(1, 5, size=C))
    assert qw_kappa(ConfusionMatrix(diag)) == 1.0
    off = diag.copy()
    off[0, 1] += 1
    assert qw_kappa(ConfusionMatrix(off)) < 1.0 - 1e-6


def test_kappa_penalises_distant_errors_more():
    near = np.array([[3, 1, 0], [0, 3, 0], [0, 0, 3]])
    far = np.array([[3, 0, 1], [0, 3, 0], [0, 0, 3]])
    assert qw_kappa(ConfusionMatrix(far)) < qw_kappa(ConfusionMatrix(near))


# ---------------------------------------------------------------- reports

def _report(method, graph, h, acc, kappa, seed=0):
    cm = confusion([1, 2, 2], [1, 2, 1], 2)
    return EvalReport(method, graph, h, acc, kappa, cm, 3, seed, extra={"train_acc": 0.9})


def test_emit_report_round_trip(tmp_path):
    reports = [_report("DiffPool", "Topo", 1, 0.5, 0.25), _report("DiffPool", "Geo", 1, 0.7, 0.35),
               _report("SAGPool", "Topo", 3, 0.6, 0.1)]
    tree = emit_report(reports, tmp_path)
    back = json.loads((tmp_path / "metrics.json").read_text())
    assert back == json.loads(json.dumps(tree))
    assert back["DiffPool"]["Geo"]["1"]["acc"] == 0.7
    rows = list(csv.reader((tmp_path / "heatmap.csv").open()))
    assert rows[0] == ["method", "h1", "h3"]
    assert rows[1] == ["DiffPool", "0.600000|0.300000", ""]
    assert rows[2] == ["SAGPool", "", "0.600000|0.100000"]
    conf = list(csv.reader((tmp_path / "confusion_DiffPool_Topo_h1.csv").open()))
    assert conf == [["true\\pred", "1", "2"], ["1", "1", "0"], ["2", "1", "1"]]


def test_empty_and_single_reports(tmp_path):
    assert emit_report([], tmp_path / "e") == {}
    assert json.loads((tmp_path / "e" / "metrics.json").read_text()) == {}
    horizons, rows = heatmap_rows(metrics_tree([_report("GCN", "Attr", 6, 0.4, 0.2)]))
    assert horizons == [6] and rows == [["GCN", "0.400000|0.200000"]]


def test_failed_cells_are_kept_but_not_averaged(tmp_path):
    bad = EvalReport("DiffPool", "Topo", 1, None, None, None, 0, 0, error="boom")
    tree = emit_report([bad, _report("DiffPool", "Geo", 1, 0.5, 0.5)], tmp_path)
    assert tree["DiffPool"]["Topo"]["1"]["error"] == "boom"
    assert heatmap_rows(tree)[1] == [["DiffPool", "0.500000|0.500000"]]


def test_aggregate_two_runs(tmp_path):
    emit_report([_report("DiffPool", "Topo", 1, 0.5, 0.2)], tmp_path / "a")
    emit_report([_report("DiffPool", "Topo", 1, 0.7, 0.4)], tmp_path / "b")
    rows = aggregate_runs([tmp_path / "a", tmp_path / "b"], tmp_path / "out")
    assert rows == [["a/DiffPool", "0.500000|0.200000"], ["b/DiffPool", "0.700000|0.400000"]]
    assert len((tmp_path / "out" / "heatmap.csv").read_text().splitlines()) == 3
