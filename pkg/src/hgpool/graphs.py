"""Road-graph adjacency builders.

Four weightings of the same road set are supported:

* ``Topo``     -- reciprocal hop count between roads
* ``Geo``      -- endpoint lengths over the length of the covering path
* ``HistPatt`` -- averaged ``exp(-alpha * DTW)`` similarity of daily series
* ``Attr``     -- ``exp(-beta * dist)`` between normalised road attributes

All builders return symmetric matrices with a zero diagonal and entries in
``[0, 1]``.
"""
from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstructionError, IngestionError

GRAPH_KINDS = ("Topo", "Geo", "HistPatt", "Attr")

# signal layout of a TrafficTensor
FLOW, OCCUPANCY, SPEED = 0, 1, 2
SIGNALS = ("flow", "occupancy", "speed")


@dataclass
class RoadTopology:
    n: int
    edges: list[tuple[int, int]]
    lengths: np.ndarray

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.float64)
        if self.n <= 0:
            raise ConstructionError("topology needs at least one road")
        if self.lengths.shape != (self.n,):
            raise ConstructionError(
                f"expected {self.n} road lengths, got {self.lengths.shape[0]}")
        if (self.lengths <= 0).any():
            bad = int(np.flatnonzero(self.lengths <= 0)[0])
            raise ConstructionError(f"road {bad} has non-positive length")
        clean = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ConstructionError(f"self-edge on road {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ConstructionError(f"edge ({a}, {b}) outside 0..{self.n - 1}")
            clean.append((a, b))
        self.edges = clean

    def neighbours(self) -> list[list[int]]:
        nb = [set() for _ in range(self.n)]
        for a, b in self.edges:
            nb[a].add(b)
            nb[b].add(a)
        return [sorted(s) for s in nb]


@dataclass
class RoadGraph:
    kind: str
    adjacency: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


# ------------------------------------------------------------ shortest paths

def _bfs(nb: list[list[int]], src: int) -> np.ndarray:
    dist = np.full(len(nb), -1, dtype=np.int64)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in nb[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def hop_distances(topo: RoadTopology) -> np.ndarray:
    """All-pairs shortest-path hop counts by BFS."""
    nb = topo.neighbours()
    out = np.empty((topo.n, topo.n), dtype=np.int64)
    for s in range(topo.n):
        d = _bfs(nb, s)
        if (d < 0).any():
            other = int(np.flatnonzero(d < 0)[0])
            raise ConstructionError(f"roads {s} and {other} are not connected")
        out[s] = d
    return out


def topo_graph(topo: RoadTopology) -> RoadGraph:
    hops = hop_distances(topo).astype(np.float64)
    w = np.zeros_like(hops)
    off = hops > 0
    w[off] = 1.0 / hops[off]
    return RoadGraph("Topo", w)


def _path_lengths(topo: RoadTopology, nb, src: int) -> np.ndarray:
    """Total length of the cheapest minimum-hop path from ``src``, both
    endpoints included."""
    hops = _bfs(nb, src)
    if (hops < 0).any():
        other = int(np.flatnonzero(hops < 0)[0])
        raise ConstructionError(f"roads {src} and {other} are not connected")
    cost = np.full(topo.n, np.inf)
    cost[src] = topo.lengths[src]
    for v in np.argsort(hops, kind="stable"):
        if v == src:
            continue
        preds = [u for u in nb[v] if hops[u] == hops[v] - 1]
        cost[v] = topo.lengths[v] + min(cost[u] for u in preds)
    return cost


def geo_graph(topo: RoadTopology) -> RoadGraph:
    """Geographic weights ``(len_i + len_j) / len(path)``.

    Among equal-hop paths the one with the smallest total length is used;
    the lexicographic tie rule never changes the weight, so it is not
    materialised.
    """
    nb = topo.neighbours()
    w = np.zeros((topo.n, topo.n))
    lengths = topo.lengths
    for s in range(topo.n):
        cost = _path_lengths(topo, nb, s)
        w[s] = (lengths[s] + lengths) / cost
    np.fill_diagonal(w, 0.0)
    # float round-off can leave the two triangles one ulp apart
    w = 0.5 * (w + w.T)
    return RoadGraph("Geo", np.minimum(w, 1.0))


# ---------------------------------------------------------------------- DTW

def dtw_distance(a, b) -> float:
    """Classic DTW with absolute-difference cost and no warping window."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw_distance needs non-empty sequences")
    return float(dtw_batch(a[None, :], b[None, :])[0])


def dtw_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """DTW distance for each row pair ``(A[p], B[p])``, vectorised over p."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    P, la = A.shape
    lb = B.shape[1]
    if la == 0 or lb == 0:
        raise ValueError("dtw needs non-empty sequences")
    cost = np.abs(A[:, :, None] - B[:, None, :])
    D = np.full((P, la + 1, lb + 1), np.inf)
    D[:, 0, 0] = 0.0
    for i in range(1, la + 1):
        prev = D[:, i - 1]
        row = D[:, i]
        diag_up = np.minimum(prev[:, :-1], prev[:, 1:])
        for j in range(1, lb + 1):
            row[:, j] = cost[:, i - 1, j - 1] + np.minimum(diag_up[:, j - 1], row[:, j - 1])
    return D[:, la, lb]


def _minmax(x: np.ndarray, axis=None) -> np.ndarray:
    lo = x.min(axis=axis, keepdims=axis is not None)
    hi = x.max(axis=axis, keepdims=axis is not None)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def pattern_graph(values: np.ndarray, signal: int = FLOW, alpha: float = 0.1,
                  window: int = 24, normalize: bool = True) -> RoadGraph:
    """Historical-pattern similarity graph.

    ``values`` is the T×n×m training span.  The chosen signal is cut into
    consecutive non-overlapping windows of ``window`` hours (a trailing
    partial window is dropped); per window and road pair the DTW distance
    becomes ``exp(-alpha * dist)`` and the final weight is the mean over
    windows.
    """
    values = np.asarray(values, dtype=np.float64)
    T, n = values.shape[:2]
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if window <= 0 or window > T:
        raise ValueError(f"window of {window} hours does not fit a series of {T}")
    series = values[:, :, signal]
    if normalize:
        series = _minmax(series)
    n_win = T // window
    iu, ju = np.triu_indices(n, k=1)
    acc = np.zeros(iu.size)
    for k in range(n_win):
        chunk = series[k * window:(k + 1) * window].T     # n × window
        acc += np.exp(-alpha * dtw_batch(chunk[iu], chunk[ju]))
    w = np.zeros((n, n))
    w[iu, ju] = acc / n_win
    w[ju, iu] = w[iu, ju]
    return RoadGraph("HistPatt", w, {"alpha": alpha, "window": window,
                                     "signal": SIGNALS[signal]})


def road_attributes(values: np.ndarray, topo: RoadTopology) -> np.ndarray:
    """Per-road ``[max flow, max speed, length]``, each column min-max
    normalised across roads."""
    values = np.asarray(values, dtype=np.float64)
    attrs = np.column_stack([values[:, :, FLOW].max(axis=0),
                             values[:, :, SPEED].max(axis=0),
                             topo.lengths])
    return _minmax(attrs, axis=0)


def attribute_graph(values: np.ndarray, topo: RoadTopology, beta: float = 1.0) -> RoadGraph:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    attrs = road_attributes(values, topo)
    diff = attrs[:, None, :] - attrs[None, :, :]
    w = np.exp(-beta * np.sqrt((diff ** 2).sum(axis=2)))
    np.fill_diagonal(w, 0.0)
    return RoadGraph("Attr", w, {"beta": beta})


def sparsify_topk(w: np.ndarray, k: int) -> np.ndarray:
    """Keep the k strongest neighbours per road (union, so still symmetric)."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    keep = np.zeros_like(w, dtype=bool)
    order = np.argsort(-w, axis=1, kind="stable")
    for i in range(n):
        cand = [j for j in order[i] if j != i][:k]
        keep[i, cand] = True
    keep |= keep.T
    return np.where(keep, w, 0.0)


def build_graph(kind: str, values: np.ndarray, topo: RoadTopology, alpha: float = 0.1,
                beta: float = 1.0, window: int = 24, signal: int = FLOW,
                topk: int | None = None) -> RoadGraph:
    if kind == "Topo":
        g = topo_graph(topo)
    elif kind == "Geo":
        g = geo_graph(topo)
    elif kind == "HistPatt":
        g = pattern_graph(values, signal=signal, alpha=alpha, window=window)
    elif kind == "Attr":
        g = attribute_graph(values, topo, beta=beta)
    else:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    if topk:
        g.adjacency = sparsify_topk(g.adjacency, topk)
        g.params["topk"] = topk
    return g


def normalize_adjacency(w: np.ndarray) -> np.ndarray:
    """``D^-1/2 (W + I) D^-1/2`` for a square non-negative matrix."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"adjacency must be square, got {w.shape}")
    a = w + np.eye(w.shape[0])
    r = 1.0 / np.sqrt(a.sum(axis=1))
    return r[:, None] * a * r[None, :]


# ----------------------------------------------------------------------- IO

def read_topology_csv(path, n: int | None = None) -> list[tuple[int, int]]:
    """Edges from a ``road_a,road_b`` CSV with 0-based indices."""
    path = Path(path)
    edges = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"road_a", "road_b"} <= set(reader.fieldnames):
            raise IngestionError(f"{path}: header must be road_a,road_b")
        for lineno, row in enumerate(reader, start=2):
            try:
                a, b = int(row["road_a"]), int(row["road_b"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{lineno}: non-integer road index") from None
            if n is not None and not (0 <= a < n and 0 <= b < n):
                raise IngestionError(f"{path}:{lineno}: road index outside 0..{n - 1}")
            edges.append((a, b))
    return edges


def read_lengths_csv(path) -> tuple[list[str], np.ndarray]:
    """Road ids in file order and their lengths in metres."""
    path = Path(path)
    ids, lengths = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"road_id", "length_m"} <= set(reader.fieldnames):
            raise IngestionError(f"{path}: header must be road_id,length_m")
        for lineno, row in enumerate(reader, start=2):
            rid = row["road_id"].strip()
            if rid in ids:
                raise IngestionError(f"{path}:{lineno}: duplicate road id {rid!r}")
            try:
                length = float(row["length_m"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{lineno}: bad length") from None
            if not length > 0:
                raise IngestionError(f"{path}:{lineno}: length must be positive")
            ids.append(rid)
            lengths.append(length)
    return ids, np.asarray(lengths)


def write_adjacency(graph: RoadGraph, path) -> tuple[Path, Path]:
    """Write the matrix as CSV plus a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for row in graph.adjacency:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    meta = {"kind": graph.kind, "n": graph.n}
    meta.update({k: graph.params[k] for k in sorted(graph.params)})
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def read_adjacency(path) -> RoadGraph:
    path = Path(path)
    w = np.loadtxt(path, delimiter=",", ndmin=2)
    meta = json.loads(path.with_suffix(".json").read_text())
    kind = meta.pop("kind")
    meta.pop("n", None)
    return RoadGraph(kind, w, meta)
