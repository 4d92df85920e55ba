"""Train both pooling models on a synthetic city and write the reports.

Uses the experiment grid (model x graph x horizon) at desk scale, then
prints the heat-map rows of "accuracy|kappa" per horizon.  Output goes to
./demo_out.  Run: python3 demos/04_train_and_report.py  (about a minute)
"""
from pathlib import Path

from hgpool.experiment import config_from_dict, run_experiment
from hgpool.metrics import emit_report, heatmap_rows

cfg = config_from_dict({
    "data": {"synth_n": 20, "synth_days": 10, "synth_seed": 4},
    "graphs": ["Topo", "HistPatt"], "models": ["DiffPool", "SAGPool"],
    "horizons": [1, 6], "epochs": 15, "patience": 5,
    "model": {"DiffPool": {"hidden": 32, "mlp_hidden": 128},
              "SAGPool": {"hidden": 32, "mlp_hidden": 128}},
})
out = Path("demo_out")
reports = run_experiment(cfg, checkpoint_dir=out / "checkpoints")
for r in reports:
    print(f"{r.tag:<24} acc {r.acc:.3f}  kappa {r.kappa:.3f}  "
          f"train acc {r.extra['train_acc']:.3f}  epochs {r.extra['epochs_run']}")

tree = emit_report(reports, out)
horizons, rows = heatmap_rows(tree)
print("\nheat map (mean over graphs), columns h" + ", h".join(map(str, horizons)))
for row in rows:
    print("  ", row)
print(f"\nfiles in {out}/:", sorted(p.name for p in out.iterdir()))
