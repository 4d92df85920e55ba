"""Differentiable graph layers shared by the pooling architectures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Var
from .errors import DimensionError


@dataclass(frozen=True)
class LayerSpec:
    kind: str            # "GCN", "SAGE" or "Linear"
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise DimensionError(f"layer dims must be positive: {self}")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_layer(store: ParamStore, prefix: str, spec: LayerSpec, rng: np.random.Generator) -> None:
    """Register the parameters a layer needs under ``prefix``."""
    d, o = spec.in_dim, spec.out_dim
    if spec.kind == "GCN":
        store.add(f"{prefix}.theta", glorot(rng, d, o))
    elif spec.kind == "SAGE":
        store.add(f"{prefix}.pool_w", glorot(rng, d, d))
        store.add(f"{prefix}.pool_b", np.zeros((1, d)))
        store.add(f"{prefix}.lin_w", glorot(rng, 2 * d, o))
        store.add(f"{prefix}.lin_b", np.zeros((1, o)))
    elif spec.kind == "Linear":
        store.add(f"{prefix}.w", glorot(rng, d, o))
        store.add(f"{prefix}.b", np.zeros((1, o)))
    else:
        raise ValueError(f"unknown layer kind {spec.kind!r}")


def apply_layer(store: ParamStore, prefix: str, spec: LayerSpec, w, h) -> Var:
    """Run one registered layer; ``w`` is the normalised adjacency for GCN
    and the raw weighted adjacency for SAGE (ignored by Linear)."""
    if spec.kind == "GCN":
        return gcn_layer(w, h, store[f"{prefix}.theta"], spec.activation)
    if spec.kind == "SAGE":
        return sage_layer(w, h, {k: store[f"{prefix}.{k}"]
                                 for k in ("pool_w", "pool_b", "lin_w", "lin_b")},
                          spec.activation)
    return ad.activate(ad.add_row(ad.matmul(h, store[f"{prefix}.w"]), store[f"{prefix}.b"]),
                       spec.activation)


def gcn_layer(w_hat, h, theta, activation: str = "relu") -> Var:
    """``act(W_hat H theta)`` with ``W_hat`` already self-loop normalised."""
    w_hat, h = ad._wrap(w_hat), ad._wrap(h)
    if w_hat.shape[1] != h.shape[0]:
        raise DimensionError(f"gcn: adjacency {w_hat.shape} vs features {h.shape}")
    # (W H) theta and W (H theta) are equal; pick the cheaper order
    theta = ad._wrap(theta)
    if theta.shape[1] < h.shape[1]:
        out = ad.matmul(w_hat, ad.matmul(h, theta))
    else:
        out = ad.matmul(ad.matmul(w_hat, h), theta)
    return ad.activate(out, activation)


def sage_layer(w, h, params: dict, activation: str = "relu") -> Var:
    """Mean-pool GraphSAGE.

    Each node averages ``sigmoid(h_u W_pool + b)`` over its neighbours,
    weighted by the adjacency entries, then ``act([h_v, a_v] W_lin + b_lin)``.
    A node with no neighbours aggregates its own feature.
    """
    w, h = ad._wrap(w), ad._wrap(h)
    if w.shape != (h.shape[0], h.shape[0]):
        raise DimensionError(f"sage: adjacency {w.shape} vs features {h.shape}")
    pooled = ad.sigmoid(ad.add_row(ad.matmul(h, params["pool_w"]), params["pool_b"]))
    agg = ad.matmul(ad.row_normalize(w), pooled)
    out = ad.add_row(ad.matmul(ad.concat_cols([h, agg]), params["lin_w"]), params["lin_b"])
    return ad.activate(out, activation)


def readout(h) -> Var:
    """``[column mean, column max]`` as a 1×2d row."""
    h = ad._wrap(h)
    if h.shape[0] == 0:
        raise DimensionError("readout of an empty node set")
    return ad.concat_cols([ad.reduce(h, "rows", "mean"), ad.reduce(h, "rows", "max")])


def mlp_logits(x, layers: list[tuple[Var, Var]], n: int, n_classes: int) -> Var:
    """Linear layers with ReLU between them, the last one reshaped to
    n×n_classes."""
    x = ad._wrap(x)
    for i, (w, b) in enumerate(layers):
        x = ad.add_row(ad.matmul(x, w), b)
        if i < len(layers) - 1:
            x = ad.relu(x)
    if x.value.size != n * n_classes:
        raise DimensionError(f"head emits {x.value.size} values, need {n}x{n_classes}")
    return ad.reshape(x, n, n_classes)


def mlp_head(x, layers: list[tuple[Var, Var]], n: int, n_classes: int) -> Var:
    return ad.row_softmax(mlp_logits(x, layers, n, n_classes))
