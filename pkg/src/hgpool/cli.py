"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 input or configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import make_samples, split_bounds, synth_dataset, write_dataset
from .errors import HGPoolError, NumericalError
from .experiment import (ExperimentConfig, build_graphs, derive_seed, evaluate, fit_codebook,
                         load_config, load_data, prepare, run_experiment, split_accuracy)
from .grading import grade_dataset, write_grades_csv
from .graphs import write_adjacency
from .metrics import aggregate_runs, emit_report
from .pooling import load_checkpoint

OK, VERIFY_FAILED, INPUT_ERROR, NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("hgpool")


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("HGP_OUT_DIR") or "hgp_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> ExperimentConfig:
    path = args.config
    if path is not None and not Path(path).exists():
        raise HGPoolError(f"{path}: config file not found")
    try:
        return load_config(path, args.overrides)
    except json.JSONDecodeError as exc:
        raise HGPoolError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def _off_diagonal(w: np.ndarray) -> np.ndarray:
    return w[~np.eye(w.shape[0], dtype=bool)]


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    if args.n < 2:
        print(f"error: --n must be at least 2, got {args.n}", file=sys.stderr)
        return INPUT_ERROR
    if args.days < 2:
        print(f"error: --days must be at least 2, got {args.days}", file=sys.stderr)
        return INPUT_ERROR
    tensor, topo = synth_dataset(args.n, args.days, args.seed)
    paths = write_dataset(tensor, topo, _out_dir(args))
    for name in ("signals", "topology", "lengths"):
        print(f"{name}: {paths[name]}")
    return OK


def cmd_build_graphs(args) -> int:
    cfg = _config(args)
    tensor, topo = load_data(cfg)
    train_end, _ = split_bounds(tensor.T, cfg.split)
    out = _out_dir(args)
    print(f"{'graph':<9} {'min':>10} {'max':>10} {'mean':>10}")
    for kind, g in build_graphs(cfg, tensor, topo, train_end).items():
        write_adjacency(g, out / f"adjacency_{kind}.csv")
        off = _off_diagonal(g.adjacency)
        print(f"{kind:<9} {off.min():>10.6f} {off.max():>10.6f} {off.mean():>10.6f}")
    return OK


def cmd_grade(args) -> int:
    cfg = _config(args)
    tensor, _ = load_data(cfg)
    train_end, _ = split_bounds(tensor.T, cfg.split)
    codebook = fit_codebook(cfg, tensor, train_end)
    grades = grade_dataset(tensor.values, codebook)
    out = _out_dir(args)
    codebook.save(out / "codebook.json")
    write_grades_csv(grades, out / "grades.csv", tensor.road_ids, tensor.timestamps)
    print(f"{'grade':<6} {'share':>8}")
    for g in range(1, cfg.n_classes + 1):
        print(f"{g:<6} {np.mean(grades == g):>8.4f}")
    return OK


def _dump_diagnostics(out: Path, cfg: ExperimentConfig, failures: list[dict]) -> Path:
    path = out / "diagnostics.json"
    path.write_text(json.dumps({"config": cfg.to_dict(), "failures": failures},
                               indent=2, sort_keys=True) + "\n")
    return path


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    reports = run_experiment(cfg, checkpoint_dir=out / "checkpoints")
    emit_report(reports, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    for r in reports:
        status = r.error or f"acc={r.acc:.4f} kappa={r.kappa:.4f} train_acc={r.extra['train_acc']:.4f}"
        print(f"{r.tag}: {status}")
    failed = [r for r in reports if r.error is not None]
    if any(r.extra.get("failure") == "numerical" for r in failed):
        path = _dump_diagnostics(out, cfg, [{"cell": r.tag, **r.cell()} for r in failed])
        print(f"numerical failure; diagnostics written to {path}", file=sys.stderr)
        return NUMERICAL
    if failed:
        return INPUT_ERROR
    return OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise HGPoolError(f"{ckpt}: checkpoint not found")
    meta = json.loads(ckpt.read_text()).get("meta", {})
    model = load_checkpoint(ckpt)
    graph = args.graph or meta.get("graph")
    horizon = args.horizon or meta.get("horizon")
    if graph is None or horizon is None:
        raise HGPoolError(f"{ckpt}: no graph/horizon recorded; pass --graph and --horizon")
    cfg.graphs = [graph]
    prep = prepare(cfg)
    samples = make_samples(prep.scaled, prep.grades, cfg.window, int(horizon), cfg.split)
    adjacency = prep.graphs[graph].adjacency
    method = meta.get("method", model.kind)
    report = evaluate(model, adjacency, samples, args.split, method, graph,
                      derive_seed(cfg.seed, "cell", method, graph, int(horizon)), cfg.n_classes)
    report.extra["train_acc"] = split_accuracy(model, adjacency, samples, samples.indices("train"))
    emit_report([report], _out_dir(args))
    if report.error:
        print(f"{report.tag}: {report.error}", file=sys.stderr)
        return INPUT_ERROR
    print(f"{report.tag}: acc={report.acc:.4f} kappa={report.kappa:.4f} n={report.n_samples}")
    return OK


def cmd_report(args) -> int:
    for d in args.runs:
        if not (Path(d) / "metrics.json").exists():
            raise HGPoolError(f"{Path(d) / 'metrics.json'}: not found")
    rows = aggregate_runs(args.runs, _out_dir(args))
    for row in rows:
        print(",".join(row))
    return OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed)
    print(gradcheck.format_table(results))
    return OK if all(r.passed for r in results) else VERIFY_FAILED


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-key override, repeatable")
    common.add_argument("--out", help="output directory (default $HGP_OUT_DIR or ./hgp_out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hgpool", description="Traffic grade prediction with "
                                "hierarchical graph pooling.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n", type=int, default=30)
    s.add_argument("--days", type=int, default=14)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    sub.add_parser("build-graphs", parents=[common], help="write the four adjacency matrices"
                   ).set_defaults(func=cmd_build_graphs)
    sub.add_parser("grade", parents=[common], help="fit the SOM grader and label the data"
                   ).set_defaults(func=cmd_grade)
    sub.add_parser("train", parents=[common], help="train and test every configured cell"
                   ).set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="re-evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--graph")
    e.add_argument("--horizon", type=int)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", parents=[common], help="aggregate run directories")
    r.add_argument("runs", nargs="+")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        out = _out_dir(args)
        path = out / "diagnostics.json"
        path.write_text(json.dumps({"error": str(exc), "traceback": traceback.format_exc()},
                                   indent=2) + "\n")
        print(f"numerical failure: {exc} (diagnostics in {path})", file=sys.stderr)
        return NUMERICAL
    except (HGPoolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
