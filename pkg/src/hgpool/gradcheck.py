"""Finite-difference checks of every layer and both pooling models."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, grad_check
from .graphs import normalize_adjacency
from .layers import LayerSpec, apply_layer, init_layer, mlp_head, readout
from .pooling import DiffPoolBlock, ModelConfig, SAGPoolBlock, assemble_model

TOLERANCE = 1e-5
MAX_DRAWS = 200


@dataclass
class CheckResult:
    component: str
    n_params: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _graph(rng, n: int) -> np.ndarray:
    w = rng.uniform(0.1, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < 0.6)
    w = np.triu(w, 1)
    return w + w.T


def _jitter(store: ParamStore, rng, scale: float = 0.2) -> None:
    """Random offset on every parameter, so zero-initialised biases do not
    leave ReLU pre-activations sitting exactly on the kink."""
    for name in store.names():
        p = store[name]
        p.value = p.value + rng.normal(scale=scale, size=p.shape)


def _projection(store: ParamStore, rng, shape):
    """A fixed random linear functional, so the loss depends on every output."""
    weights = rng.normal(size=shape)
    return lambda out: ad.sum_all(ad.hadamard(out, weights))


def check_gcn(rng) -> tuple[ParamStore, callable]:
    n, d, o = 5, 4, 3
    store = ParamStore()
    spec = LayerSpec("GCN", d, o, "relu")
    init_layer(store, "gcn", spec, rng)
    _jitter(store, rng)
    w_hat = normalize_adjacency(_graph(rng, n))
    x = store.add("x", rng.normal(size=(n, d)))
    proj = _projection(store, rng, (n, o))
    return store, lambda: proj(apply_layer(store, "gcn", spec, w_hat, x))


def check_sage(rng):
    n, d, o = 5, 4, 3
    store = ParamStore()
    spec = LayerSpec("SAGE", d, o, "tanh")
    init_layer(store, "sage", spec, rng)
    _jitter(store, rng)
    x = store.add("x", rng.normal(size=(n, d)))
    w = store.add("w", _graph(rng, n) + 0.05)
    proj = _projection(store, rng, (n, o))
    return store, lambda: proj(apply_layer(store, "sage", spec, w, x))


def check_readout(rng):
    store = ParamStore()
    x = store.add("x", rng.normal(size=(6, 4)))
    proj = _projection(store, rng, (1, 8))
    return store, lambda: proj(readout(x))


def check_mlp(rng):
    n, c, d, hid = 4, 3, 5, 6
    store = ParamStore()
    x = store.add("x", rng.normal(size=(1, d)))
    layers = []
    for i, (a, b) in enumerate([(d, hid), (hid, hid), (hid, n * c)]):
        layers.append((store.add(f"w{i}", rng.normal(size=(a, b)) / np.sqrt(a)),
                       store.add(f"b{i}", rng.normal(size=(1, b)) * 0.1)))
    proj = _projection(store, rng, (n, c))
    return store, lambda: proj(mlp_head(x, layers, n, c))


def check_diffpool_block(rng):
    n, d = 6, 4
    store = ParamStore()
    block = DiffPoolBlock(store, "pool", d, d, n, 0.5, 1, rng)
    _jitter(store, rng)
    x = store.add("x", rng.normal(size=(n, d)))
    w = _graph(rng, n)
    p_w = _projection(store, rng, (block.n_out, block.n_out))
    p_x = _projection(store, rng, (block.n_out, d))

    def loss():
        w2, x2, _ = block(ad.Var(w), x)
        return ad.add(p_w(w2), p_x(x2))
    return store, loss


def check_sagpool_block(rng):
    n, d = 6, 4
    store = ParamStore()
    block = SAGPoolBlock(store, "sag", d, 3, n, 0.5, 1, rng)
    _jitter(store, rng)
    x = store.add("x", rng.normal(size=(n, d)))
    w = _graph(rng, n)
    _, _, idx, _ = block(w, x)
    proj = _projection(store, rng, (block.n_out, 3))
    return store, lambda: proj(block(w, x, idx=idx)[1])


def _model_check(kind: str, rng, cfg: ModelConfig):
    n, w, m, c = 8, 2, 3, 3
    for _ in range(MAX_DRAWS):
        model = assemble_model(kind, n, w * m, c, cfg, seed=int(rng.integers(1 << 30)))
        adj = _graph(rng, n)
        x = rng.normal(size=(n, w * m))
        grades = rng.integers(1, c + 1, size=n)
        _jitter(model.store, rng, 0.5)
        frozen = None
        if kind != "SAGPool":
            break
        frozen, h, ww, scores = [], x, adj, []
        for block in model.blocks:
            ww, h, idx, kept = block(ww, h)
            frozen.append(idx)
            scores.append(np.abs(kept.value))
        # Saturated or vanishing attention scores make the deeper blocks'
        # gradients fall below what central differences can resolve.
        scores = np.concatenate([s.ravel() for s in scores])
        if scores.min() > 0.05 and scores.max() < 0.95:
            break
    else:
        raise RuntimeError(f"no non-degenerate {kind} point in {MAX_DRAWS} draws")
    return model.store, lambda: ad.softmax_cross_entropy(
        model.logits(adj, x, frozen_idx=frozen), grades - 1)


def check_diffpool_model(rng):
    return _model_check("DiffPool", rng, ModelConfig(hidden=4, mlp_hidden=5, blocks=1))


def check_sagpool_model(rng):
    return _model_check("SAGPool", rng, ModelConfig(hidden=4, mlp_hidden=5, blocks=3))


def check_gcn_baseline(rng):
    return _model_check("GCN", rng, ModelConfig(hidden=4, mlp_hidden=5))


def check_sage_baseline(rng):
    return _model_check("SAGE", rng, ModelConfig(hidden=4, mlp_hidden=5))


CHECKS = {
    "GCN layer": check_gcn,
    "SAGE layer": check_sage,
    "readout": check_readout,
    "MLP head": check_mlp,
    "DiffPool block": check_diffpool_block,
    "SAGPool block": check_sagpool_block,
    "DiffPool model": check_diffpool_model,
    "SAGPool model": check_sagpool_model,
    "GCN baseline": check_gcn_baseline,
    "SAGE baseline": check_sage_baseline,
}


def run_all(seed: int = 0, checks=None) -> list[CheckResult]:
    results = []
    for i, (name, build) in enumerate((checks or CHECKS).items()):
        rng = np.random.default_rng([seed, i])
        start = time.perf_counter()
        store, loss = build(rng)
        err = grad_check(loss, store)
        results.append(CheckResult(name, store.size(), err, time.perf_counter() - start))
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'component':<16} {'params':>7} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.component:<16} {r.n_params:>7} {r.max_rel_error:>12.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
