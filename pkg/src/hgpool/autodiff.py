"""Dense-matrix reverse-mode differentiation and Adam.

Every value is a 2-D float64 array wrapped in a :class:`Var`.  Operations
record their inputs and a closure that maps the output gradient to input
gradients; :func:`backward` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError


def as_matrix(value) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite entries in {arr.shape} matrix")
    return arr


class Var:
    """A node of the computation graph.

    Leaves are either constants or trainable parameters (``trainable=True``).
    ``grad`` has the shape of ``value`` after :func:`backward` has run.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "op", "trainable", "name")

    def __init__(self, value, parents: Sequence["Var"] = (), backward_fn=None,
                 op: str = "leaf", trainable: bool = False, name: str | None = None):
        self.value = as_matrix(value)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.op = op
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var<{self.op}{label} {self.shape}>"

    # operator sugar, used sparingly by layer code
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _needs_grad(*xs: Var) -> bool:
    return any(x.trainable or x.parents for x in xs)


def _node(value, parents, fn, op) -> Var:
    if not _needs_grad(*parents):
        return Var(value, op=op)
    return Var(value, parents, fn, op)


def _check_same(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- products

def matmul(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def fn(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), fn, "matmul")


def transpose(a) -> Var:
    a = _wrap(a)
    return _node(a.value.T, (a,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def add_row(a, row) -> Var:
    """``a + row`` with a 1×d row broadcast over the rows of ``a`` (bias)."""
    a, row = _wrap(a), _wrap(row)
    if row.shape != (1, a.shape[1]):
        raise DimensionError(f"add_row: row {row.shape} does not fit {a.shape}")
    return _node(a.value + row.value, (a, row),
                 lambda g: (g, g.sum(axis=0, keepdims=True)), "add_row")


def scale(a, c: float) -> Var:
    a = _wrap(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def hadamard(a, b) -> Var:
    a, b = _wrap(a), _wrap(b)
    _check_same(a, b, "hadamard")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def scale_rows(a, s) -> Var:
    """Multiply row i of ``a`` by ``s[i]``; ``s`` is n×1."""
    a, s = _wrap(a), _wrap(s)
    if s.shape != (a.shape[0], 1):
        raise DimensionError(f"scale_rows: scores {s.shape} do not fit {a.shape}")
    av, sv = a.value, s.value

    def fn(g):
        return g * sv, (g * av).sum(axis=1, keepdims=True)

    return _node(av * sv, (a, s), fn, "scale_rows")


def relu(a) -> Var:
    a = _wrap(a)
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Var:
    a = _wrap(a)
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Var:
    a = _wrap(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


ELEMENTWISE: dict[str, Callable] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "hadamard": hadamard,
    "add": add,
    "sub": sub,
    "scale": scale,
}


def elementwise(kind: str, a, b=None) -> Var:
    """Dispatch an entrywise op by name; ``scale`` takes a float as ``b``."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {kind!r}") from None
    return fn(a) if b is None else fn(a, b)


def activate(a, kind: str | None) -> Var:
    if kind is None or kind == "none":
        return _wrap(a)
    if kind not in ("relu", "sigmoid", "tanh"):
        raise ConfigError(f"unknown activation {kind!r}")
    return ELEMENTWISE[kind](a)


# ----------------------------------------------------------------- softmax

def row_softmax(a) -> Var:
    a = _wrap(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _node(out, (a,), fn, "row_softmax")


def softmax_cross_entropy(logits, targets: np.ndarray) -> Var:
    """Mean over rows of ``-log softmax(logits)[i, targets[i]]``.

    ``targets`` holds 0-based class indices, one per row.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if targets.shape != (n,):
        raise DimensionError(f"cross entropy: {targets.shape[0]} targets for {n} rows")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def fn(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g[0, 0] / n),)

    return _node(loss, (logits,), fn, "cross_entropy")


# --------------------------------------------------------------- reductions

def reduce(a, axis: str, kind: str) -> Var:
    """Reduce along ``axis``: ``"rows"`` collapses rows to a 1×cols result,
    ``"cols"`` collapses columns to rows×1.  ``kind`` is mean, max or sum.
    """
    a = _wrap(a)
    if axis not in ("rows", "cols"):
        raise ConfigError(f"axis must be 'rows' or 'cols', got {axis!r}")
    ax = 0 if axis == "rows" else 1
    size = a.shape[ax]
    if size == 0:
        raise DimensionError(f"reduce over empty axis of {a.shape}")
    x = a.value
    if kind == "sum":
        out = x.sum(axis=ax, keepdims=True)

        def fn(g):
            return (np.broadcast_to(g, x.shape).copy(),)
    elif kind == "mean":
        out = x.mean(axis=ax, keepdims=True)

        def fn(g):
            return (np.broadcast_to(g / size, x.shape).copy(),)
    elif kind == "max":
        # argmax returns the first maximiser, which fixes the tie rule
        arg = x.argmax(axis=ax)
        out = np.take_along_axis(x, np.expand_dims(arg, ax), axis=ax)

        def fn(g):
            d = np.zeros_like(x)
            if ax == 0:
                d[arg, np.arange(x.shape[1])] = g[0]
            else:
                d[np.arange(x.shape[0]), arg] = g[:, 0]
            return (d,)
    else:
        raise ConfigError(f"unknown reduction {kind!r}")
    return _node(out, (a,), fn, f"reduce_{kind}")


def sum_all(a) -> Var:
    a = _wrap(a)
    shape = a.shape
    return _node(a.value.sum(), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def mean_all(xs: Sequence[Var]) -> Var:
    """Average of scalar vars, as one node."""
    xs = [_wrap(x) for x in xs]
    if not xs:
        raise DimensionError("mean of no values")
    k = len(xs)
    total = sum(float(x.value[0, 0]) for x in xs) / k
    return _node(total, xs, lambda g: tuple(g / k for _ in xs), "mean_all")


# ------------------------------------------------------------ restructuring

def concat_cols(parts: Sequence) -> Var:
    parts = [_wrap(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def fn(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts)))

    return _node(np.hstack([p.value for p in parts]), parts, fn, "concat_cols")


def reshape(a, rows: int, cols: int) -> Var:
    a = _wrap(a)
    if a.value.size != rows * cols:
        raise DimensionError(f"reshape: {a.shape} cannot become ({rows}, {cols})")
    shape = a.shape
    return _node(a.value.reshape(rows, cols), (a,),
                 lambda g: (g.reshape(shape),), "reshape")


def take_rows(a, idx) -> Var:
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def fn(g):
        d = np.zeros(shape)
        np.add.at(d, idx, g)
        return (d,)

    return _node(a.value[idx], (a,), fn, "take_rows")


def submatrix(a, idx) -> Var:
    """Principal submatrix ``a[idx][:, idx]``."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def fn(g):
        d = np.zeros(shape)
        np.add.at(d, np.ix_(idx, idx), g)
        return (d,)

    return _node(a.value[np.ix_(idx, idx)], (a,), fn, "submatrix")


# ---------------------------------------------------------- graph operators

def sym_normalize(w) -> Var:
    """``D^-1/2 (W + I) D^-1/2`` with D the row sums of ``W + I``."""
    w = _wrap(w)
    n, m = w.shape
    if n != m:
        raise DimensionError(f"adjacency must be square, got {w.shape}")
    a = w.value + np.eye(n)
    d = a.sum(axis=1)
    if (d <= 0).any():
        raise NumericalError("non-positive degree in adjacency normalisation")
    r = 1.0 / np.sqrt(d)
    out = r[:, None] * a * r[None, :]

    def fn(g):
        ga = g * r[:, None] * r[None, :]
        gr = (g * a * r[None, :]).sum(axis=1) + (g * a * r[:, None]).sum(axis=0)
        gd = gr * (-0.5) * r ** 3
        return (ga + gd[:, None],)

    return _node(out, (w,), fn, "sym_normalize")


def row_normalize(w) -> Var:
    """Weighted-mean operator ``W / rowsum(W)``; empty rows point at themselves."""
    w = _wrap(w)
    n, m = w.shape
    if n != m:
        raise DimensionError(f"adjacency must be square, got {w.shape}")
    x = w.value
    s = x.sum(axis=1)
    empty = s <= 0
    safe = np.where(empty, 1.0, s)
    out = x / safe[:, None]
    out[empty] = 0.0
    out[empty, np.flatnonzero(empty)] = 1.0

    def fn(g):
        d = (g - (g * out).sum(axis=1, keepdims=True)) / safe[:, None]
        d[empty] = 0.0
        return (d,)

    return _node(out, (w,), fn, "row_normalize")


# ----------------------------------------------------------------- backward

def _topological(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var, store: "ParamStore | None" = None) -> None:
    """Fill ``.grad`` of every node reachable from the scalar ``root``.

    Gradients are reset before accumulation, so calling this twice on the
    same graph gives the same result.  Parameters in ``store`` that do not
    influence ``root`` receive a zero gradient.
    """
    if root.shape != (1, 1):
        raise DimensionError(f"backward needs a 1x1 root, got {root.shape}")
    order = _topological(root)
    if store is not None:
        store.zero_grad()
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.trainable or parent.parents:
                parent.grad += g


# --------------------------------------------------------------- parameters

class ParamStore:
    """Named trainable matrices with Adam moments."""

    def __init__(self):
        self.params: dict[str, Var] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Var:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name!r}")
        p = Var(value, trainable=True, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.value)
        self.v[name] = np.zeros_like(p.value)
        return p

    def __getitem__(self, name: str) -> Var:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def size(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.value)

    def clear_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise ConfigError(f"missing parameter {k!r} in state")
            val = as_matrix(state[k])
            if val.shape != p.shape:
                raise DimensionError(f"{k}: stored {val.shape}, expected {p.shape}")
            p.value = val.copy()


def adam_step(store: ParamStore, lr: float = 5e-4, weight_decay: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update with coupled L2 weight decay."""
    for name, p in store:
        if p.grad is None:
            raise ConfigError(f"parameter {name!r} has no gradient")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store:
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr:
            new = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
            if not np.isfinite(new).all():
                raise NumericalError(f"parameter {name!r} diverged")
            p.value = new


# -------------------------------------------------------------- grad check

def grad_check(f: Callable[[], Var], store: ParamStore, h: float = 1e-6,
               names: Iterable[str] | None = None) -> float:
    """Largest relative error between backprop and central differences.

    The error of one parameter matrix is
    ``||a - n|| / max(||a||, ||n||, 1e-12)`` (Frobenius norms), and the
    result is the maximum over parameters.  ``f`` rebuilds the scalar loss
    from the current parameter values each time it is called.
    """
    names = list(store.params) if names is None else list(names)
    root = f()
    backward(root, store)
    analytic = {k: store[k].grad.copy() for k in names}
    worst = 0.0
    for k in names:
        p = store[k]
        base = p.value
        flat = base.ravel()
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + h
            p.value = bumped.reshape(base.shape)
            up = float(f().value[0, 0])
            bumped[i] = flat[i] - h
            p.value = bumped.reshape(base.shape)
            down = float(f().value[0, 0])
            numeric[i] = (up - down) / (2.0 * h)
        a = analytic[k].ravel()
        err = np.linalg.norm(a - numeric) / max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(err))
        p.value = base
    return worst
