"""Turn raw (flow, occupancy, speed) readings into five ordinal grades.

A 3x3 self-organising map clusters the normalised readings; clusters are
ranked by mean speed and merged into five grades of similar size, grade 1
being free flow and grade 5 a jam.  Run: python3 demos/02_grading.py
"""
import numpy as np

from hgpool.data import REGIME_CENTRES, synth_dataset, synth_regimes
from hgpool.grading import fit_grader, grade_dataset, som_assign_many

raw = synth_regimes(2000, seed=1)
codebook = fit_grader(raw, n_grades=5, seed=1)
grades = codebook.grade_map[som_assign_many(codebook, codebook.normalize(raw))]
print("five planted regimes (flow, occupancy, speed):")
for c in REGIME_CENTRES:
    print("   ", c)
print(f"\n{'grade':<6} {'share':>6} {'flow':>8} {'occ':>6} {'speed':>7}")
for g in range(1, 6):
    m = raw[grades == g].mean(axis=0)
    print(f"{g:<6} {np.mean(grades == g):6.3f} {m[0]:8.1f} {m[1]:6.3f} {m[2]:7.1f}")

tensor, _ = synth_dataset(n=10, days=7, seed=2)
cb = fit_grader(tensor.values.reshape(-1, 3), seed=2)
road_grades = grade_dataset(tensor.values, cb)
print("\ngrades of road 0 over its first day:")
print(" ".join(str(g) for g in road_grades[0, :24]))
