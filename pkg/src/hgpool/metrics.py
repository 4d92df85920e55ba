"""Accuracy, quadratic weighted kappa and report files."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ConfusionMatrix:
    """``counts[i, j]`` = samples with true grade i+1 predicted as j+1."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def freq(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def true_marginal(self) -> np.ndarray:
        return self.freq.sum(axis=1)

    @property
    def pred_marginal(self) -> np.ndarray:
        return self.freq.sum(axis=0)


def confusion(true, pred, n_classes: int) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64).ravel()
    pred = np.asarray(pred, dtype=np.int64).ravel()
    if true.size != pred.size:
        raise ValueError(f"length mismatch: {true.size} true vs {pred.size} predicted")
    if true.size == 0:
        raise ValueError("confusion matrix of no samples")
    for name, arr in (("true", true), ("predicted", pred)):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ValueError(f"{name} grades outside 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true - 1, pred - 1), 1)
    return ConfusionMatrix(counts)


def accuracy(true, pred) -> float:
    true = np.asarray(true).ravel()
    pred = np.asarray(pred).ravel()
    if true.size != pred.size:
        raise ValueError(f"length mismatch: {true.size} true vs {pred.size} predicted")
    if true.size == 0:
        raise ValueError("accuracy of no samples")
    return float(np.mean(true == pred))


def kappa_weights(n_classes: int) -> np.ndarray:
    i = np.arange(n_classes)
    return 1.0 - ((i[:, None] - i[None, :]) / (n_classes - 1)) ** 2


def qw_kappa(cm: ConfusionMatrix) -> float:
    """``(P_o - P_e) / (1 - P_e)`` with agreement weights
    ``1 - ((i - j) / (C - 1))^2``.

    Evaluated in the equivalent disagreement form
    ``1 - sum(d * O) / sum(d * E)`` with ``d = 1 - w``, which is exactly 1
    for a diagonal confusion matrix.  When ``P_e == 1`` the ratio is
    undefined; return 1 for perfect agreement and 0 otherwise.
    """
    if cm.total <= 0:
        raise ValueError("kappa of an empty confusion matrix")
    if cm.n_classes < 2:
        raise ValueError("kappa needs at least two grades")
    d = 1.0 - kappa_weights(cm.n_classes)
    p = cm.freq
    expected = np.outer(p.sum(axis=1), p.sum(axis=0))
    observed_dis = float((d * p).sum())
    expected_dis = float((d * expected).sum())
    if expected_dis <= 0.0:
        return 1.0 if observed_dis <= 0.0 else 0.0
    return 1.0 - observed_dis / expected_dis


@dataclass
class EvalReport:
    method: str
    graph: str
    horizon: int
    acc: float | None
    kappa: float | None
    confusion: ConfusionMatrix | None
    n_samples: int
    seed: int
    extra: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def tag(self) -> str:
        return f"{self.method}_{self.graph}_h{self.horizon}"

    def cell(self) -> dict:
        d = {"acc": self.acc, "kappa": self.kappa, "n_samples": self.n_samples, "seed": self.seed}
        d.update(self.extra)
        if self.error is not None:
            d["error"] = self.error
        return d


def metrics_tree(reports) -> dict:
    tree: dict = {}
    for r in reports:
        tree.setdefault(r.method, {}).setdefault(r.graph, {})[str(r.horizon)] = r.cell()
    return tree


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def heatmap_rows(tree: dict, label_prefix: str = "") -> tuple[list[int], list[list[str]]]:
    """One row per method; each cell averages acc and kappa over graphs."""
    horizons = sorted({int(h) for graphs in tree.values() for cells in graphs.values()
                       for h in cells})
    rows = []
    for method in sorted(tree):
        row = [label_prefix + method]
        for h in horizons:
            cells = [g[str(h)] for g in tree[method].values()
                     if str(h) in g and g[str(h)].get("acc") is not None]
            if not cells:
                row.append("")
                continue
            acc = float(np.mean([c["acc"] for c in cells]))
            kap = float(np.mean([c["kappa"] for c in cells]))
            row.append(f"{_fmt(acc)}|{_fmt(kap)}")
        rows.append(row)
    return horizons, rows


def write_heatmap(path, horizons, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + [f"h{h}" for h in horizons])
        w.writerows(rows)


def write_confusion(cm: ConfusionMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + [str(j + 1) for j in range(cm.n_classes)])
        for i, row in enumerate(cm.counts):
            w.writerow([str(i + 1)] + [str(int(c)) for c in row])


def emit_report(reports, path) -> dict:
    """Write metrics.json, confusion_<tag>.csv and heatmap.csv into ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    reports = list(reports)
    tree = metrics_tree(reports)
    (out / "metrics.json").write_text(json.dumps(tree, indent=2, sort_keys=True) + "\n")
    for r in reports:
        if r.confusion is not None:
            write_confusion(r.confusion, out / f"confusion_{r.tag}.csv")
    horizons, rows = heatmap_rows(tree)
    write_heatmap(out / "heatmap.csv", horizons, rows)
    return tree


def aggregate_runs(run_dirs, path) -> list[list[str]]:
    """Combine several runs' metrics.json into one heatmap.csv."""
    all_h: set[int] = set()
    trees = []
    for d in run_dirs:
        tree = json.loads((Path(d) / "metrics.json").read_text())
        trees.append((Path(d).name, tree))
        all_h |= {int(h) for graphs in tree.values() for cells in graphs.values() for h in cells}
    horizons = sorted(all_h)
    rows = []
    for name, tree in trees:
        _, sub = heatmap_rows(tree, label_prefix=f"{name}/")
        own, _ = heatmap_rows(tree)
        for row in sub:
            cells = dict(zip(own, row[1:]))
            rows.append([row[0]] + [cells.get(h, "") for h in horizons])
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_heatmap(out / "heatmap.csv", horizons, rows)
    return rows
