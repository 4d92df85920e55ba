import numpy as np
import pytest
from hypothesis import given, strategies as st

from hgpool.data import REGIME_CENTRES, synth_regimes
from hgpool.errors import GradingError
from hgpool.grading import (GradeCodebook, _partition, fit_grader, grade_dataset, order_grades,
                            som_assign, som_assign_many, som_train, write_grades_csv)
from hgpool.graphs import SPEED


def test_zero_epochs_keeps_seeded_initialisation():
    samples = np.random.default_rng(0).uniform(size=(20, 3))
    cb = som_train(samples, grid=(2, 3), epochs=0, seed=5, n_grades=1)
    np.testing.assert_array_equal(cb.prototypes,
                                  np.random.default_rng(5).uniform(0, 1, size=(6, 3)))


def test_identical_samples_attract_every_prototype():
    v = np.array([0.2, 0.7, 0.4])
    cb = som_train(np.tile(v, (200, 1)), grid=(3, 3), epochs=5, seed=1)
    assert np.abs(cb.prototypes - v).max() < 0.05
    bmu = som_assign(cb, v)
    assert np.linalg.norm(cb.prototypes[bmu] - v) < 1e-3


def test_two_clouds_one_prototype_each():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.0, 0.1, size=(100, 3))
    b = rng.uniform(0.9, 1.0, size=(100, 3))
    cb = som_train(np.vstack([a, b]), grid=(1, 2), epochs=20, seed=0, n_grades=2)
    # k-means oracle on two clusters: the centroids
    centres = np.array([a.mean(axis=0), b.mean(axis=0)])
    owner = [int(np.argmin(np.linalg.norm(centres - p, axis=1))) for p in cb.prototypes]
    assert sorted(owner) == [0, 1]
    for p, k in zip(cb.prototypes, owner):
        cloud = (a, b)[k]
        assert np.all(p >= cloud.min(axis=0)) and np.all(p <= cloud.max(axis=0))
        assert np.linalg.norm(p - centres[k]) < 0.05


def test_training_is_deterministic():
    s = np.random.default_rng(3).uniform(size=(300, 3))
    a = som_train(s, seed=9, epochs=3)
    b = som_train(s, seed=9, epochs=3)
    assert np.array_equal(a.prototypes, b.prototypes)
    assert a.final_lr == pytest.approx(0.01)


def test_grid_smaller_than_classes():
    with pytest.raises(GradingError):
        som_train(np.zeros((4, 3)), grid=(2, 2), n_grades=5)
    with pytest.raises(GradingError):
        som_train(np.zeros((0, 3)))


def _codebook(protos):
    p = np.asarray(protos, dtype=np.float64)
    return GradeCodebook(grid=(1, len(p)), prototypes=p, feature_min=np.zeros(3),
                         feature_max=np.ones(3), seed=0, epochs=0, final_lr=0.0)


def test_assign_ties_and_exact_hits():
    cb = _codebook([[0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5]])
    assert som_assign(cb, [1, 1, 1]) == 1
    assert som_assign(cb, [0.25, 0.25, 0.25]) == 0


@given(st.integers(0, 2**31))
def test_assign_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    cb = _codebook(rng.uniform(size=(7, 3)))
    xs = rng.uniform(size=(30, 3))
    scan = []
    for x in xs:
        best, best_d = 0, np.inf
        for k, p in enumerate(cb.prototypes):
            d = sum((x[i] - p[i]) ** 2 for i in range(3))
            if d < best_d:
                best, best_d = k, d
        scan.append(best)
    assert som_assign_many(cb, xs).tolist() == scan
    assert [som_assign(cb, x) for x in xs] == scan


def test_order_grades_rank_isomorphism():
    # five prototypes at strictly decreasing speed give grades 1..5 in order
    protos = np.array([[0.5, 0.5, s] for s in (0.9, 0.7, 0.5, 0.3, 0.1)])
    cb = order_grades(_codebook(protos), protos, n_grades=5)
    assert cb.grade_map.tolist() == [1, 2, 3, 4, 5]
    shuffled = protos[[3, 0, 4, 1, 2]]
    cb = order_grades(_codebook(shuffled), shuffled, n_grades=5)
    assert cb.grade_map.tolist() == [4, 1, 5, 2, 3]


def test_single_class_is_all_ones():
    s = np.random.default_rng(0).uniform(size=(50, 3))
    cb = order_grades(som_train(s, epochs=1, n_grades=1), s, n_grades=1)
    assert set(cb.grade_map.tolist()) == {1}


def test_too_few_non_empty_clusters():
    protos = [[0, 0, 0], [1, 1, 1], [0.5, 0.5, 0.5]]
    with pytest.raises(GradingError):
        order_grades(_codebook(protos), np.zeros((10, 3)), n_grades=2)


def brute_partition(masses, nonempty, groups):
    k = len(masses)
    target = sum(masses) / groups
    best, best_cost = None, np.inf
    # cut positions between 1..k-1
    from itertools import combinations
    for cuts in combinations(range(1, k), groups - 1):
        bounds = (0, *cuts, k)
        ok = all(any(nonempty[bounds[g]:bounds[g + 1]]) for g in range(groups))
        if not ok:
            continue
        cost = sum((sum(masses[bounds[g]:bounds[g + 1]]) - target) ** 2 for g in range(groups))
        if cost < best_cost - 1e-12:
            best_cost = cost
            best = bounds
    return best_cost


@given(st.lists(st.integers(0, 20), min_size=3, max_size=8), st.integers(1, 3))
def test_partition_is_optimal_and_contiguous(masses, groups):
    masses = np.array(masses, dtype=float)
    nonempty = masses > 0
    if nonempty.sum() < groups:
        return
    labels = _partition(masses, nonempty, groups)
    assert labels == sorted(labels) and set(labels) == set(range(groups))
    target = masses.sum() / groups
    cost = sum((masses[np.array(labels) == g].sum() - target) ** 2 for g in range(groups))
    assert cost == pytest.approx(brute_partition(masses, nonempty, groups), abs=1e-9)


def test_five_regimes_give_five_monotone_grades():
    raw = synth_regimes(2500, seed=4)
    cb = fit_grader(raw, n_grades=5, grid=(3, 3), epochs=10, seed=0)
    grades = grade_dataset(raw.reshape(-1, 1, 3), cb).ravel()
    assert set(grades.tolist()) == {1, 2, 3, 4, 5}
    means = [raw[grades == g, SPEED].mean() for g in range(1, 6)]
    assert all(a > b for a, b in zip(means, means[1:]))
    # quantile oracle: the regimes are equal-sized, so each grade holds ~1/5
    shares = np.bincount(grades, minlength=6)[1:] / grades.size
    assert np.all(np.abs(shares - 0.2) < 0.05)


def test_grade_map_monotone_in_cluster_speed():
    raw = synth_regimes(1500, seed=7)
    cb = fit_grader(raw, n_grades=5, grid=(3, 3), epochs=5, seed=3)
    norm = cb.normalize(raw)
    assign = som_assign_many(cb, norm)
    for a in range(cb.size):
        for b in range(cb.size):
            if (assign == a).any() and (assign == b).any():
                sa, sb = norm[assign == a, SPEED].mean(), norm[assign == b, SPEED].mean()
                if sa > sb:
                    assert cb.grade_map[a] <= cb.grade_map[b]


def test_free_flow_sample_gets_grade_one():
    raw = synth_regimes(2000, seed=1)
    cb = fit_grader(raw, n_grades=5, epochs=5, seed=0)
    free = np.array([[[0.0, 0.0, raw[:, SPEED].max()]]])
    assert grade_dataset(free, cb)[0, 0] == 1


def test_grades_are_reproducible_and_in_range():
    raw = synth_regimes(800, seed=2).reshape(-1, 8, 3)
    cb = fit_grader(raw, n_grades=5, epochs=3, seed=1)
    g = grade_dataset(raw, cb)
    assert g.shape == (8, 100)
    assert set(np.unique(g)) <= {1, 2, 3, 4, 5}
    assert np.array_equal(g, grade_dataset(raw, cb))


def test_codebook_json_round_trip(tmp_path):
    cb = fit_grader(synth_regimes(500, seed=0), epochs=2, seed=4)
    cb.save(tmp_path / "cb.json")
    back = GradeCodebook.load(tmp_path / "cb.json")
    assert np.array_equal(back.prototypes, cb.prototypes)
    assert np.array_equal(back.grade_map, cb.grade_map)
    assert back.seed == 4 and back.grid == cb.grid


def test_grades_csv(tmp_path):
    write_grades_csv(np.array([[1, 2], [3, 4]]), tmp_path / "g.csv", ["A", "B"], ["t0", "t1"])
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "road_id,timestamp,grade"
    assert lines[1:] == ["A,t0,1", "A,t1,2", "B,t0,3", "B,t1,4"]
