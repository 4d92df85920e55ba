"""Ordinal traffic grades from a Kohonen self-organising map.

Raw (flow, occupancy, speed) triples are min-max normalised, clustered
by a small rectangular SOM, and the clusters are ranked by the mean
speed of their members: grade 1 is the freest flow, grade ``n_grades``
the most congested.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GradingError
from .graphs import SPEED


@dataclass
class GradeCodebook:
    grid: tuple[int, int]
    prototypes: np.ndarray
    feature_min: np.ndarray
    feature_max: np.ndarray
    seed: int
    epochs: int
    final_lr: float
    grade_map: np.ndarray | None = None
    n_grades: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        span = self.feature_max - self.feature_min
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(x, dtype=np.float64) - self.feature_min) / safe, 0.0)

    def to_json(self) -> dict:
        return {
            "grid": list(self.grid),
            "prototypes": self.prototypes.tolist(),
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "grade_map": None if self.grade_map is None else [int(g) for g in self.grade_map],
            "n_grades": self.n_grades,
            "seed": self.seed,
            "epochs": self.epochs,
            "final_lr": self.final_lr,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GradeCodebook":
        gm = d.get("grade_map")
        return cls(grid=tuple(d["grid"]), prototypes=np.asarray(d["prototypes"], dtype=np.float64),
                   feature_min=np.asarray(d["feature_min"], dtype=np.float64),
                   feature_max=np.asarray(d["feature_max"], dtype=np.float64),
                   seed=d["seed"], epochs=d["epochs"], final_lr=d["final_lr"],
                   grade_map=None if gm is None else np.asarray(gm, dtype=np.int64),
                   n_grades=d.get("n_grades"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "GradeCodebook":
        return cls.from_json(json.loads(Path(path).read_text()))


def feature_bounds(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=np.float64)
    return samples.min(axis=0), samples.max(axis=0)


def som_train(samples: np.ndarray, grid: tuple[int, int] = (3, 3), epochs: int = 10,
              seed: int = 0, n_grades: int = 5,
              bounds: tuple[np.ndarray, np.ndarray] | None = None) -> GradeCodebook:
    """Online Kohonen training on samples already scaled to ``[0, 1]``.

    Prototypes start uniform in the unit cube.  Over all ``epochs * N``
    updates the learning rate falls linearly from 0.5 to 0.01 and the
    neighbourhood radius from ``max(grid) / 2`` to 0.5; sample order is
    reshuffled every epoch.  Grid cells within the radius of the BMU are
    updated with Gaussian weight ``exp(-d^2 / (2 r^2))``, cells beyond it
    are left alone, so the final phase is plain competitive learning.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise GradingError("som_train needs a non-empty 2-D sample array")
    g1, g2 = grid
    k = g1 * g2
    if k < n_grades:
        raise GradingError(f"{g1}x{g2} grid has fewer cells than {n_grades} grades")
    rng = np.random.default_rng(seed)
    protos = rng.uniform(0.0, 1.0, size=(k, samples.shape[1]))
    coords = np.array([(i, j) for i in range(g1) for j in range(g2)], dtype=np.float64)
    grid_d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)

    N = samples.shape[0]
    total = epochs * N
    r0 = max(g1, g2) / 2.0
    lr0, lr1, r1 = 0.5, 0.01, 0.5
    lr = lr0
    step = 0
    for _ in range(epochs):
        for i in rng.permutation(N):
            frac = step / (total - 1) if total > 1 else 1.0
            lr = lr0 + (lr1 - lr0) * frac
            radius = r0 + (r1 - r0) * frac
            x = samples[i]
            bmu = int(np.argmin(((protos - x) ** 2).sum(axis=1)))
            h = np.exp(-grid_d2[bmu] / (2.0 * radius * radius)) * (grid_d2[bmu] <= radius * radius)
            protos += (lr * h)[:, None] * (x - protos)
            step += 1

    if bounds is None:
        lo, hi = np.zeros(samples.shape[1]), np.ones(samples.shape[1])
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    return GradeCodebook(grid=(g1, g2), prototypes=protos, feature_min=lo, feature_max=hi,
                         seed=seed, epochs=epochs, final_lr=float(lr), n_grades=n_grades)


def som_assign(codebook: GradeCodebook, sample) -> int:
    """Index of the nearest prototype (lowest index on ties)."""
    x = np.asarray(sample, dtype=np.float64)
    return int(np.argmin(((codebook.prototypes - x) ** 2).sum(axis=1)))


def som_assign_many(codebook: GradeCodebook, samples: np.ndarray, chunk: int = 65536) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    out = np.empty(samples.shape[0], dtype=np.int64)
    P = codebook.prototypes
    for s in range(0, samples.shape[0], chunk):
        block = samples[s:s + chunk]
        d2 = ((block[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        out[s:s + chunk] = d2.argmin(axis=1)
    return out


def _partition(masses: np.ndarray, nonempty: np.ndarray, groups: int) -> list[int]:
    """Split positions 0..k-1 into ``groups`` contiguous runs, each holding
    a non-empty cluster, minimising squared deviation from equal mass.
    Returns the group index (0-based) of every position."""
    k = masses.size
    target = masses.sum() / groups
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    cnt = np.concatenate([[0], np.cumsum(nonempty)])
    INF = np.inf
    best = np.full((groups + 1, k + 1), INF)
    back = np.zeros((groups + 1, k + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for g in range(1, groups + 1):
        for end in range(1, k + 1):
            for start in range(end):
                if best[g - 1, start] == INF or cnt[end] - cnt[start] == 0:
                    continue
                c = best[g - 1, start] + (cum[end] - cum[start] - target) ** 2
                if c < best[g, end]:
                    best[g, end] = c
                    back[g, end] = start
    labels = np.empty(k, dtype=np.int64)
    end = k
    for g in range(groups, 0, -1):
        start = back[g, end]
        labels[start:end] = g - 1
        end = start
    return labels.tolist()


def order_grades(codebook: GradeCodebook, samples: np.ndarray,
                 n_grades: int | None = None) -> GradeCodebook:
    """Attach a cluster-to-grade map ranked by descending mean speed.

    ``samples`` are in normalised space.  Clusters that attract no sample
    are ranked by their prototype's speed coordinate and carry no mass.
    """
    n_grades = n_grades or codebook.n_grades
    samples = np.asarray(samples, dtype=np.float64)
    assign = som_assign_many(codebook, samples)
    k = codebook.size
    masses = np.bincount(assign, minlength=k).astype(np.float64)
    nonempty = masses > 0
    if nonempty.sum() < n_grades:
        raise GradingError(
            f"only {int(nonempty.sum())} non-empty clusters for {n_grades} grades")
    speed_sum = np.bincount(assign, weights=samples[:, SPEED], minlength=k)
    key = np.where(nonempty, speed_sum / np.where(nonempty, masses, 1.0),
                   codebook.prototypes[:, SPEED])
    order = np.argsort(-key, kind="stable")
    labels = _partition(masses[order], nonempty[order], n_grades)
    grade_map = np.empty(k, dtype=np.int64)
    grade_map[order] = np.asarray(labels) + 1
    codebook.grade_map = grade_map
    codebook.n_grades = n_grades
    return codebook


def fit_grader(raw_samples: np.ndarray, n_grades: int = 5, grid=(3, 3), epochs: int = 10,
               seed: int = 0, max_samples: int | None = None) -> GradeCodebook:
    """Normalise raw (flow, occupancy, speed) rows, train and rank a SOM."""
    raw = np.asarray(raw_samples, dtype=np.float64).reshape(-1, 3)
    lo, hi = feature_bounds(raw)
    cb = GradeCodebook(grid=tuple(grid), prototypes=np.zeros((1, 3)), feature_min=lo,
                       feature_max=hi, seed=seed, epochs=epochs, final_lr=0.0)
    norm = cb.normalize(raw)
    train = norm
    if max_samples is not None and norm.shape[0] > max_samples:
        rng = np.random.default_rng([seed, 1])
        train = norm[np.sort(rng.choice(norm.shape[0], max_samples, replace=False))]
    cb = som_train(train, grid=grid, epochs=epochs, seed=seed, n_grades=n_grades,
                   bounds=(lo, hi))
    return order_grades(cb, norm, n_grades)


def grade_dataset(values: np.ndarray, codebook: GradeCodebook) -> np.ndarray:
    """n×T matrix of grades for a raw T×n×3 tensor."""
    if codebook.grade_map is None:
        raise GradingError("codebook has no grade map; call order_grades first")
    values = np.asarray(values, dtype=np.float64)
    T, n, m = values.shape
    clusters = som_assign_many(codebook, codebook.normalize(values.reshape(-1, m)))
    return codebook.grade_map[clusters].reshape(T, n).T.copy()


def write_grades_csv(grades: np.ndarray, path, road_ids=None, timestamps=None) -> None:
    n, T = grades.shape
    road_ids = list(range(n)) if road_ids is None else list(road_ids)
    timestamps = list(range(T)) if timestamps is None else list(timestamps)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["road_id", "timestamp", "grade"])
        for i in range(n):
            for t in range(T):
                w.writerow([road_ids[i], timestamps[t], int(grades[i, t])])
