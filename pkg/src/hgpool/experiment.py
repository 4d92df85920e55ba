"""Experiment configuration, training loop and the model x graph x horizon grid."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (TrafficTensor, load_dataset, make_samples, minmax_normalize,
                   split_bounds, synth_dataset)
from .errors import ConfigError, HGPoolError, NumericalError
from .grading import GradeCodebook, fit_grader, grade_dataset
from .graphs import GRAPH_KINDS, SIGNALS, RoadGraph, RoadTopology, build_graph
from .metrics import EvalReport, accuracy, confusion, qw_kappa
from .pooling import (DEFAULT_CONFIGS, MODEL_KINDS, ModelConfig, PoolModel, assemble_model,
                      node_features, save_checkpoint)

log = logging.getLogger(__name__)


@dataclass
class DataConfig:
    signals: str | None = None
    topology: str | None = None
    lengths: str | None = None
    synth_n: int = 30
    synth_days: int = 14
    synth_seed: int = 7


@dataclass
class SOMConfig:
    grid: list[int] = field(default_factory=lambda: [3, 3])
    epochs: int = 5
    max_samples: int | None = 20000


@dataclass
class OptimizerConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _default_models() -> dict[str, ModelConfig]:
    return {k: dataclasses.replace(v) for k, v in DEFAULT_CONFIGS.items()}


@dataclass
class ExperimentConfig:
    """Every knob of a run, with the reference defaults."""

    data: DataConfig = field(default_factory=DataConfig)
    graphs: list[str] = field(default_factory=lambda: list(GRAPH_KINDS))
    models: list[str] = field(default_factory=lambda: ["DiffPool", "SAGPool"])
    horizons: list[int] = field(default_factory=lambda: [1, 3, 6, 12, 24])
    window: int = 24
    n_classes: int = 5
    alpha: float = 0.1
    beta: float = 1.0
    pattern_window: int = 24
    pattern_signal: str = "flow"
    graph_topk: int | None = None
    som: SOMConfig = field(default_factory=SOMConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 24
    epochs: int = 500
    patience: int | None = 50
    target_train_acc: float | None = None
    seed: int = 0
    split: list[float] = field(default_factory=lambda: [0.7, 0.1, 0.2])
    divergence_limit: float = 1e6
    model: dict[str, ModelConfig] = field(default_factory=_default_models)

    def validate(self) -> "ExperimentConfig":
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError("horizons must be a non-empty list of integers >= 1")
        if self.window < 1 or self.n_classes < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("window, n_classes and batch_size must be positive")
        for g in self.graphs:
            if g not in GRAPH_KINDS:
                raise ConfigError(f"unknown graph kind {g!r}")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model kind {m!r}")
        if self.target_train_acc is not None and not 0 < self.target_train_acc <= 1:
            raise ConfigError("target_train_acc must lie in (0, 1]")
        if self.pattern_signal not in SIGNALS:
            raise ConfigError(f"pattern_signal must be one of {SIGNALS}")
        try:
            split_bounds(100, self.split)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"data": DataConfig, "som": SOMConfig, "optimizer": OptimizerConfig}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {where + '.' if where else ''}{unknown[0]}")
    kwargs = {}
    for name, value in raw.items():
        path = f"{where}.{name}" if where else name
        if name == "model" and cls is ExperimentConfig:
            models = _default_models()
            if not isinstance(value, dict):
                raise ConfigError("model: expected an object keyed by model kind")
            for kind, sub in value.items():
                if kind not in MODEL_KINDS:
                    raise ConfigError(f"unknown config key model.{kind}")
                merged = dataclasses.asdict(models[kind])
                merged.update(sub)
                models[kind] = _build(ModelConfig, merged, f"model.{kind}")
            kwargs[name] = models
        elif cls is ExperimentConfig and name in _NESTED:
            kwargs[name] = _build(_NESTED[name], value, path)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings to a nested dict (values parsed as JSON
    when possible)."""
    raw = json.loads(json.dumps(raw))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(text)
    return raw


def load_config(path=None, overrides=None) -> ExperimentConfig:
    raw = {} if path is None else json.loads(Path(path).read_text())
    raw = apply_overrides(raw, overrides)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "")
    return cfg.validate()


# --------------------------------------------------------------------- seeds

def derive_seed(seed: int, *names) -> int:
    """Independent, reproducible integer seed for a named component."""
    digest = hashlib.sha256("/".join(str(n) for n in names).encode()).digest()
    key = int.from_bytes(digest[:8], "little")
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(key,)).generate_state(1)[0])


def derive_rng(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))


# ------------------------------------------------------------------ prepare

@dataclass
class Prepared:
    """Everything shared by the cells of one run."""

    tensor: TrafficTensor
    topo: RoadTopology
    codebook: GradeCodebook
    grades: np.ndarray
    scaled: np.ndarray
    train_end: int
    graphs: dict[str, RoadGraph]


def load_data(cfg: ExperimentConfig) -> tuple[TrafficTensor, RoadTopology]:
    d = cfg.data
    if d.signals or d.topology or d.lengths:
        if not (d.signals and d.topology and d.lengths):
            raise ConfigError("data.signals, data.topology and data.lengths go together")
        return load_dataset(d.signals, d.topology, d.lengths)
    return synth_dataset(d.synth_n, d.synth_days, d.synth_seed)


def fit_codebook(cfg: ExperimentConfig, tensor: TrafficTensor, train_end: int) -> GradeCodebook:
    raw = tensor.values[:train_end].reshape(-1, tensor.values.shape[2])
    return fit_grader(raw, n_grades=cfg.n_classes, grid=tuple(cfg.som.grid),
                      epochs=cfg.som.epochs, seed=derive_seed(cfg.seed, "som"),
                      max_samples=cfg.som.max_samples)


def build_graphs(cfg: ExperimentConfig, tensor: TrafficTensor, topo: RoadTopology,
                 train_end: int, kinds=None) -> dict[str, RoadGraph]:
    span = tensor.values[:train_end]
    return {k: build_graph(k, span, topo, alpha=cfg.alpha, beta=cfg.beta,
                           window=cfg.pattern_window,
                           signal=SIGNALS.index(cfg.pattern_signal), topk=cfg.graph_topk)
            for k in (kinds or cfg.graphs)}


def prepare(cfg: ExperimentConfig, tensor=None, topo=None) -> Prepared:
    if tensor is None:
        tensor, topo = load_data(cfg)
    train_end, _ = split_bounds(tensor.T, cfg.split)
    codebook = fit_codebook(cfg, tensor, train_end)
    grades = grade_dataset(tensor.values, codebook)
    scaled, _, _ = minmax_normalize(tensor.values, train_end)
    graphs = build_graphs(cfg, tensor, topo, train_end)
    return Prepared(tensor, topo, codebook, grades, scaled, train_end, graphs)


# ----------------------------------------------------------------- training

def predict_split(model: PoolModel, adjacency, samples, idx) -> tuple[np.ndarray, np.ndarray]:
    true, pred = [], []
    for i in idx:
        pred.append(model.predict(adjacency, node_features(samples.window(i))))
        true.append(samples.target(i))
    return np.concatenate(true), np.concatenate(pred)


def split_accuracy(model, adjacency, samples, idx) -> float | None:
    if len(idx) == 0:
        return None
    t, p = predict_split(model, adjacency, samples, idx)
    return accuracy(t, p)


def train_model(model: PoolModel, adjacency: np.ndarray, samples, cfg: ExperimentConfig,
                rng: np.random.Generator) -> dict:
    """Mini-batch Adam on mean node cross-entropy.

    With ``cfg.patience`` set and a non-empty validation split, training
    stops after that many epochs without a validation-accuracy gain and
    the best parameters are restored.  With ``cfg.target_train_acc`` set,
    training stops at the first epoch whose end-of-epoch training accuracy
    reaches it.
    """
    opt = cfg.optimizer
    train_idx = samples.indices("train")
    val_idx = samples.indices("val")
    if train_idx.size == 0:
        raise ConfigError("no training samples; series too short for window + horizon")
    feats = {int(i): node_features(samples.window(i)) for i in train_idx}
    use_val = cfg.patience is not None and val_idx.size > 0
    best_acc, best_state, best_epoch, stale = -1.0, None, 0, 0
    loss = float("nan")
    epoch, reached = 0, False
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for s in range(0, order.size, cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            losses = [model.loss(adjacency, feats[int(i)], samples.target(i)) for i in batch]
            root = ad.mean_all(losses)
            value = float(root.value[0, 0])
            if not np.isfinite(value) or value > cfg.divergence_limit:
                raise NumericalError(f"loss diverged to {value:.3g} at epoch {epoch}")
            ad.backward(root, model.store)
            ad.adam_step(model.store, lr=opt.lr, weight_decay=opt.weight_decay,
                         beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
            total += value * batch.size
        loss = total / order.size
        if cfg.target_train_acc is not None:
            if split_accuracy(model, adjacency, samples, train_idx) >= cfg.target_train_acc:
                reached = True
                break
        if use_val:
            acc = split_accuracy(model, adjacency, samples, val_idx)
            if acc > best_acc:
                best_acc, best_state, best_epoch, stale = acc, model.store.state_dict(), epoch, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_state is not None and not reached:
        model.store.load_state_dict(best_state)
    model.store.clear_grad()
    return {"epochs_run": epoch, "best_epoch": best_epoch if use_val and not reached else epoch,
            "final_loss": loss}


def evaluate(model, adjacency, samples, split: str, method: str, graph: str, seed: int,
             n_classes: int) -> EvalReport:
    idx = samples.indices(split)
    if idx.size == 0:
        return EvalReport(method, graph, samples.h, None, None, None, 0, seed,
                          error=f"empty {split} split")
    t, p = predict_split(model, adjacency, samples, idx)
    cm = confusion(t, p, n_classes)
    kap = qw_kappa(cm) if n_classes > 1 else 1.0
    return EvalReport(method, graph, samples.h, accuracy(t, p), kap, cm, int(idx.size), seed)


def run_cell(cfg: ExperimentConfig, prep: Prepared, method: str, graph: str, h: int,
             checkpoint_dir=None) -> EvalReport:
    seed = derive_seed(cfg.seed, "cell", method, graph, h)
    samples = make_samples(prep.scaled, prep.grades, cfg.window, h, cfg.split)
    adjacency = prep.graphs[graph].adjacency
    model = assemble_model(method, prep.tensor.n, cfg.window * prep.tensor.values.shape[2],
                           cfg.n_classes, cfg.model[method], seed=seed)
    info = train_model(model, adjacency, samples, cfg, derive_rng(seed, "batches"))
    report = evaluate(model, adjacency, samples, "test", method, graph, seed, cfg.n_classes)
    report.extra["train_acc"] = split_accuracy(model, adjacency, samples, samples.indices("train"))
    report.extra["val_acc"] = split_accuracy(model, adjacency, samples, samples.indices("val"))
    report.extra.update(info)
    if checkpoint_dir is not None:
        save_checkpoint(model, Path(checkpoint_dir) / f"{report.tag}.json",
                        meta={"method": method, "graph": graph, "horizon": h})
    return report


def run_experiment(cfg: ExperimentConfig, prep: Prepared | None = None,
                   checkpoint_dir=None) -> list[EvalReport]:
    """Train and test every (model, graph, horizon) cell.

    A failing cell is reported with its error and the remaining cells
    still run.
    """
    cfg.validate()
    prep = prep or prepare(cfg)
    reports = []
    for method in cfg.models:
        for graph in cfg.graphs:
            for h in cfg.horizons:
                try:
                    r = run_cell(cfg, prep, method, graph, h, checkpoint_dir)
                except (HGPoolError, ValueError) as exc:
                    log.warning("cell %s/%s/h%d failed: %s", method, graph, h, exc)
                    kind = "numerical" if isinstance(exc, NumericalError) else "error"
                    r = EvalReport(method, graph, h, None, None, None, 0,
                                   derive_seed(cfg.seed, "cell", method, graph, h),
                                   extra={"failure": kind}, error=str(exc))
                reports.append(r)
    return reports
