import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscmine.cluster import (
    ClusteringResult,
    clustering_runs,
    dbscan,
    epsilon_range,
    kth_nn_distances,
    knee_index,
    n_hom,
    select_epsilon,
    subsample_indices,
)
from oscmine.experiments import planted_agreement, planted_cluster_set
from oracles import brute_dbscan, brute_kth_nn, same_partition


def test_dbscan_tiny_by_hand():
    x = np.array([[0.0], [0.1], [0.2], [0.4], [5.0], [5.1], [5.2], [9.0]])
    res = dbscan(x, 0.15, 1)
    np.testing.assert_array_equal(res.labels, [0, 0, 0, -1, 1, 1, 1, -1])
    np.testing.assert_array_equal(res.core_flags, [1, 1, 1, 0, 1, 1, 1, 0])
    assert res.n_clusters == 2 and res.outlier_fraction == pytest.approx(2 / 8)


def test_dbscan_border_joins_lowest_cluster():
    # point 2 is a border of both clusters
    x = np.array([[0.0], [0.5], [1.0], [1.5], [2.0]])
    res = dbscan(x, 0.5, 1)
    assert res.labels.tolist() == [0, 0, 0, 0, 0]
    res = dbscan(np.array([[0.0], [0.4], [1.0], [1.6], [2.0]]), 0.6, 1)
    labels, _ = brute_dbscan(np.array([[0.0], [0.4], [1.0], [1.6], [2.0]]).tolist(), 0.6, 1)
    assert res.labels.tolist() == labels


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 80), dim=st.integers(1, 5),
       m=st.integers(1, 6), eps=st.floats(0.2, 2.0))
def test_dbscan_matches_brute_force(seed, n, dim, m, eps):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    res = dbscan(x, eps, m)
    ref_labels, ref_core = brute_dbscan(x.tolist(), eps, m)
    np.testing.assert_array_equal(res.core_flags, ref_core)
    # with border ties resolved towards the earliest cluster the labels agree exactly
    np.testing.assert_array_equal(res.labels, ref_labels)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(5, 60), k=st.integers(1, 4))
def test_kth_nn_matches_brute_force(seed, n, k):
    x = np.random.default_rng(seed).standard_normal((n, 3))
    np.testing.assert_allclose(kth_nn_distances(x, k), brute_kth_nn(x.tolist(), k), atol=1e-12)


def test_kth_nn_needs_enough_points():
    with pytest.raises(ValueError):
        kth_nn_distances(np.zeros((3, 2)), 3)


def test_knee_index():
    curve = np.r_[np.linspace(0, 1, 200), np.linspace(1, 50, 20)]
    i = knee_index(curve, width=10)
    assert 200 <= i <= 210
    assert knee_index(np.linspace(0, 1, 300), width=10) is None


def test_knee_index_modes():
    # two jumps, the later one followed by a flat plateau
    curve = np.r_[np.linspace(0, 1, 100), np.linspace(1, 40, 10), np.full(100, 40.0),
                  np.linspace(40, 4000, 10), np.full(40, 4000.0)]
    first = knee_index(curve, width=10, mode="first")
    last = knee_index(curve, width=10, mode="last")
    assert 100 <= first <= 110
    assert 210 <= last <= 220
    with pytest.raises(ValueError):
        knee_index(curve, width=10, mode="middle")


def test_epsilon_range_flat_fallback():
    x = np.repeat(np.eye(3), 20, axis=0) + 0.0
    x = np.vstack([x, x + 1e-20])
    rng = epsilon_range(np.random.default_rng(0).standard_normal((40, 2)) * 0 + 1.0, k=2)
    assert rng.fallback and rng.eps_min == 0.5 and rng.eps_max == 1.5


def test_select_epsilon_planted():
    E, lab = planted_cluster_set(3)
    eps, res = select_epsilon(E)
    assert res.n_hom == 3 and planted_agreement(res.labels, lab) >= 0.95
    assert res.m_pts == 24


def test_select_epsilon_no_structure():
    E = np.random.default_rng(0).uniform(size=(150, 12))
    eps, res = select_epsilon(E)
    if res.n_hom == 0:
        assert res.diagnostic and np.all(res.labels == -1)


def test_select_epsilon_requires_100_samples():
    with pytest.raises(ValueError):
        select_epsilon(np.zeros((50, 12)))


def test_n_hom_counts_only_homogeneous():
    E = np.array([[0.0, 0], [0.1, 0], [0, 0.1], [5, 5], [5.1, 5], [2.6, 2.5]])
    labels = np.array([0, 0, 0, 1, 1, 1])
    r = ClusteringResult(labels, 1.0, 2, np.ones(6, bool))
    # cluster 1 holds a far point so its worst silhouette is negative
    assert n_hom(r, E) == 1


def test_subsample_indices():
    subs = subsample_indices(1000, 200, 4, seed=5)
    assert len(subs) == 4 and all(s.size == 200 and np.all(np.diff(s) > 0) for s in subs)
    again = subsample_indices(1000, 200, 4, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(subs, again))
    assert [s.size for s in subsample_indices(50, 200, 4, 0)] == [50]


def test_clustering_runs_small_input_single_pass():
    E, lab = planted_cluster_set(1)
    runs = clustering_runs(E, n_samples=2000, n_reps=12, seed=0)
    assert len(runs) == 1
    np.testing.assert_array_equal(runs[0].sample_ids, np.arange(E.shape[0]))


def test_clustering_runs_skips_tiny():
    runs = clustering_runs(np.zeros((20, 12)), seed=0)
    assert runs[0].diagnostic and np.all(runs[0].labels == -1)


def test_same_partition_helper():
    assert same_partition([0, 0, 1], [5, 5, 2]) and not same_partition([0, 0, 1], [1, 2, 2])
