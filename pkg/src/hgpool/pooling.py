"""Hierarchical pooling blocks and full model assemblies.

DiffPool coarsens by soft cluster assignment (``S^T Z``, ``S^T W S``);
SAGPool keeps the top-scoring nodes under a tanh-GCN attention score.
The GCN and GraphSAGE baselines share the same readout/MLP tail.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Var
from .errors import ConfigError, DimensionError
from .graphs import RoadGraph, normalize_adjacency
from .layers import LayerSpec, apply_layer, glorot, init_layer, mlp_logits, readout

MODEL_KINDS = ("DiffPool", "SAGPool", "GCN", "SAGE")


def pooled_size(n: int, ratio: float) -> int:
    """``ceil(ratio * n)``, robust to float round-off, at least 1."""
    if not 0 < ratio <= 1:
        raise ConfigError(f"pooling ratio must lie in (0, 1], got {ratio}")
    return max(1, math.ceil(ratio * n - 1e-9))


def _stack_specs(kind: str, dims: list[int], last_activation: str = "relu") -> list[LayerSpec]:
    acts = ["relu"] * (len(dims) - 2) + [last_activation]
    return [LayerSpec(kind, a, b, act) for a, b, act in zip(dims[:-1], dims[1:], acts)]


def _run_stack(store, prefix, specs, w, h):
    for i, spec in enumerate(specs):
        h = apply_layer(store, f"{prefix}.{i}", spec, w, h)
    return h


# ----------------------------------------------------------------- DiffPool

class DiffPoolBlock:
    """Soft-assignment coarsening with independent embed/assign SAGE stacks."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, out_dim: int,
                 n_in: int, ratio: float, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ConfigError("a pooling block needs at least one layer")
        self.store, self.prefix = store, prefix
        self.n_in = n_in
        self.n_out = pooled_size(n_in, ratio)
        self.embed = _stack_specs("SAGE", [in_dim] + [out_dim] * layers)
        self.assign = _stack_specs("SAGE", [in_dim] + [out_dim] * (layers - 1) + [self.n_out],
                                   last_activation="none")
        for i, s in enumerate(self.embed):
            init_layer(store, f"{prefix}.embed.{i}", s, rng)
        for i, s in enumerate(self.assign):
            init_layer(store, f"{prefix}.assign.{i}", s, rng)

    def __call__(self, w, x) -> tuple[Var, Var, Var]:
        """Return ``(S^T W S, S^T Z, S)``."""
        w, x = ad._wrap(w), ad._wrap(x)
        if w.shape != (x.shape[0], x.shape[0]):
            raise DimensionError(f"diffpool: adjacency {w.shape} vs features {x.shape}")
        z = _run_stack(self.store, f"{self.prefix}.embed", self.embed, w, x)
        s = ad.row_softmax(_run_stack(self.store, f"{self.prefix}.assign", self.assign, w, x))
        st = ad.transpose(s)
        return ad.matmul(ad.matmul(st, w), s), ad.matmul(st, z), s


# ------------------------------------------------------------------ SAGPool

def topk_select(scores, ratio: float) -> np.ndarray:
    """Indices of the ``ceil(ratio * n)`` largest scores, best first; ties
    go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    k = pooled_size(scores.size, ratio)
    return np.argsort(-scores, kind="stable")[:k]


def sagpool_score(w_hat, x, theta_att) -> Var:
    """tanh-GCN attention score, n×1."""
    return ad.tanh(ad.matmul(ad.matmul(ad._wrap(w_hat), x), theta_att))


class SAGPoolBlock:
    """GCN feature stack followed by self-attention top-k node dropping."""

    def __init__(self, store: ParamStore, prefix: str, in_dim: int, out_dim: int,
                 n_in: int, ratio: float, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ConfigError("a pooling block needs at least one layer")
        self.store, self.prefix = store, prefix
        self.ratio = ratio
        self.n_in = n_in
        self.n_out = pooled_size(n_in, ratio)
        self.gcn = _stack_specs("GCN", [in_dim] + [out_dim] * layers)
        for i, s in enumerate(self.gcn):
            init_layer(store, f"{prefix}.gcn.{i}", s, rng)
        store.add(f"{prefix}.att", glorot(rng, out_dim, 1))

    def __call__(self, w, x, w_hat=None, idx=None):
        """Return ``(W[idx, idx], H[idx] * score[idx], idx, score[idx])``.

        ``idx`` may be supplied to freeze the node choice (gradient checks).
        """
        if w_hat is None:
            w_hat = (ad.sym_normalize(w) if isinstance(w, Var) and w.parents
                     else normalize_adjacency(ad._wrap(w).value))
        h = _run_stack(self.store, f"{self.prefix}.gcn", self.gcn, w_hat, x)
        scores = sagpool_score(w_hat, h, self.store[f"{self.prefix}.att"])
        if idx is None:
            idx = topk_select(scores.value, self.ratio)
        kept = ad.take_rows(scores, idx)
        x_out = ad.scale_rows(ad.take_rows(h, idx), kept)
        if isinstance(w, Var):
            w_out = ad.submatrix(w, idx) if w.parents else w.value[np.ix_(idx, idx)]
        else:
            w_out = np.asarray(w)[np.ix_(idx, idx)]
        return w_out, x_out, idx, kept


# ------------------------------------------------------------------- models

@dataclass
class ModelConfig:
    """Architecture hyper-parameters.

    ``hidden`` is the node-embedding width (DiffPool), GCN width
    (SAGPool) or per-layer width (baselines).  The final head layer always
    emits ``n * n_classes`` values.
    """

    hidden: int = 64
    mlp_hidden: int = 320
    pool_ratio: float = 0.5
    blocks: int = 1
    layers: int = 1
    baseline_layers: int = 3


DEFAULT_CONFIGS = {
    "DiffPool": ModelConfig(hidden=64, mlp_hidden=320, pool_ratio=0.5, blocks=1, layers=1),
    "SAGPool": ModelConfig(hidden=1790, mlp_hidden=1790, pool_ratio=0.5, blocks=3, layers=1),
    "GCN": ModelConfig(hidden=64, mlp_hidden=1790, baseline_layers=3),
    "SAGE": ModelConfig(hidden=64, mlp_hidden=1790, baseline_layers=3),
}


@dataclass
class PoolModel:
    kind: str
    config: ModelConfig
    n: int
    in_dim: int
    n_classes: int
    seed: int
    store: ParamStore = field(default_factory=ParamStore, repr=False)
    blocks: list = field(default_factory=list, repr=False)
    head: list = field(default_factory=list, repr=False)
    _cache: tuple | None = field(default=None, repr=False)

    @property
    def node_counts(self) -> list[int]:
        return [b.n_out for b in self.blocks]

    def _head(self, in_dim: int, widths: list[int], rng) -> None:
        dims = [in_dim] + widths + [self.n * self.n_classes]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.store.add(f"mlp.{i}.w", glorot(rng, a, b))
            self.store.add(f"mlp.{i}.b", np.zeros((1, b)))
            self.head.append((self.store[f"mlp.{i}.w"], self.store[f"mlp.{i}.b"]))

    def _w_hat(self, adjacency: np.ndarray) -> np.ndarray:
        if self._cache is None or self._cache[0] is not adjacency:
            self._cache = (adjacency, normalize_adjacency(adjacency))
        return self._cache[1]

    def logits(self, adjacency: np.ndarray, x, frozen_idx=None, trace=None) -> Var:
        """Unnormalised n×n_classes scores for one sample.

        A list passed as ``trace`` receives one dict per pooling block:
        the assignment matrix for DiffPool, kept indices and scores for
        SAGPool.
        """
        adjacency = np.asarray(adjacency, dtype=np.float64)
        x = ad._wrap(x)
        if adjacency.shape != (self.n, self.n) or x.shape != (self.n, self.in_dim):
            raise DimensionError(
                f"{self.kind} expects a {self.n}-node graph with {self.in_dim} features, "
                f"got adjacency {adjacency.shape} and features {x.shape}")
        s = self.store
        c = self.config
        if self.kind == "DiffPool":
            h = _run_stack(s, "embed", self._embed, adjacency, x)
            w = ad.Var(adjacency)
            for b, block in enumerate(self.blocks):
                w_coarse, x_coarse, assign = block(w, h)
                if trace is not None:
                    trace.append({"assignment": assign.value.copy()})
                w = ad.sym_normalize(w_coarse)
                h = _run_stack(s, f"pool{b}.extract", self._extract[b], w, x_coarse)
            rep = readout(h)
        elif self.kind == "SAGPool":
            w, h, reps = adjacency, x, []
            for b, block in enumerate(self.blocks):
                w_hat = self._w_hat(adjacency) if b == 0 else None
                idx = None if frozen_idx is None else frozen_idx[b]
                w, h, kept_idx, kept = block(w, h, w_hat=w_hat, idx=idx)
                if trace is not None:
                    trace.append({"kept": kept_idx.copy(), "scores": kept.value.ravel().copy()})
                reps.append(readout(h))
            rep = ad.concat_cols(reps)
        elif self.kind == "GCN":
            h = _run_stack(s, "gcn", self._stack, self._w_hat(adjacency), x)
            rep = readout(h)
        else:
            h = _run_stack(s, "sage", self._stack, adjacency, x)
            rep = readout(h)
        return mlp_logits(rep, self.head, self.n, self.n_classes)

    def forward(self, adjacency, x, frozen_idx=None) -> Var:
        return ad.row_softmax(self.logits(adjacency, x, frozen_idx))

    def loss(self, adjacency, x, grades) -> Var:
        """Cross-entropy against 1-based grades, averaged over nodes."""
        return ad.softmax_cross_entropy(self.logits(adjacency, x), np.asarray(grades) - 1)

    def predict(self, adjacency, x) -> np.ndarray:
        """1-based grade per node."""
        return self.logits(adjacency, x).value.argmax(axis=1) + 1


def assemble_model(kind: str, n: int, in_dim: int, n_classes: int = 5,
                   config: ModelConfig | None = None, seed: int = 0) -> PoolModel:
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    config = config or DEFAULT_CONFIGS[kind]
    if config.hidden <= 0 or config.mlp_hidden <= 0:
        raise ConfigError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    m = PoolModel(kind, config, n, in_dim, n_classes, seed)
    d = config.hidden
    if kind == "DiffPool":
        if config.blocks < 1:
            raise ConfigError("DiffPool needs at least one pooling block")
        m._embed = _stack_specs("SAGE", [in_dim] + [d] * config.layers)
        for i, spec in enumerate(m._embed):
            init_layer(m.store, f"embed.{i}", spec, rng)
        m._extract = []
        nodes = n
        for b in range(config.blocks):
            block = DiffPoolBlock(m.store, f"pool{b}", d, d, nodes, config.pool_ratio,
                                  config.layers, rng)
            m.blocks.append(block)
            specs = _stack_specs("SAGE", [d] * (config.layers + 1))
            for i, spec in enumerate(specs):
                init_layer(m.store, f"pool{b}.extract.{i}", spec, rng)
            m._extract.append(specs)
            nodes = block.n_out
        m._head(2 * d, [config.mlp_hidden, config.mlp_hidden], rng)
    elif kind == "SAGPool":
        if config.blocks < 1:
            raise ConfigError("SAGPool needs at least one pooling block")
        nodes, width = n, in_dim
        for b in range(config.blocks):
            block = SAGPoolBlock(m.store, f"sag{b}", width, d, nodes, config.pool_ratio,
                                 config.layers, rng)
            m.blocks.append(block)
            nodes, width = block.n_out, d
        m._head(2 * d * config.blocks, [config.mlp_hidden, config.mlp_hidden], rng)
    else:
        layer = "GCN" if kind == "GCN" else "SAGE"
        m._stack = _stack_specs(layer, [in_dim] + [d] * config.baseline_layers)
        for i, spec in enumerate(m._stack):
            init_layer(m.store, f"{layer.lower()}.{i}", spec, rng)
        m._head(2 * d, [config.mlp_hidden], rng)
    return m


def node_features(window: np.ndarray) -> np.ndarray:
    """Flatten a w×n×m window to n×(w·m) node features (time-major)."""
    window = np.asarray(window, dtype=np.float64)
    w, n, m = window.shape
    return window.transpose(1, 0, 2).reshape(n, w * m)


def model_forward(model: PoolModel, window: np.ndarray, graph: RoadGraph | np.ndarray) -> np.ndarray:
    """n×n_classes grade probabilities for one w×n×m input window."""
    adj = graph.adjacency if isinstance(graph, RoadGraph) else graph
    return model.forward(adj, node_features(window)).value


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: PoolModel, path, meta: dict | None = None) -> tuple[Path, Path]:
    """JSON manifest at ``path`` plus a ``.bin`` blob of little-endian
    float64 parameters, each prefixed by its name and shape.  ``meta`` is
    stored verbatim in the manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = path.with_suffix(".bin")
    manifest = {
        "kind": model.kind, "config": asdict(model.config), "n": model.n,
        "in_dim": model.in_dim, "n_classes": model.n_classes, "seed": model.seed,
        "params": [{"name": k, "shape": list(p.shape)} for k, p in model.store],
        "blob": blob.name, "meta": meta or {},
    }
    with blob.open("wb") as fh:
        for name, p in model.store:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *p.shape))
            fh.write(p.value.astype("<f8").tobytes())
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path, blob


def read_blob(path) -> dict[str, np.ndarray]:
    out = {}
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        r, c = struct.unpack_from("<II", data, pos)
        pos += 8
        out[name] = np.frombuffer(data, dtype="<f8", count=r * c, offset=pos).reshape(r, c).copy()
        pos += 8 * r * c
    return out


def load_checkpoint(path) -> PoolModel:
    path = Path(path)
    manifest = json.loads(path.read_text())
    model = assemble_model(manifest["kind"], manifest["n"], manifest["in_dim"],
                           manifest["n_classes"], ModelConfig(**manifest["config"]),
                           manifest["seed"])
    model.store.load_state_dict(read_blob(path.with_name(manifest["blob"])))
    return model
