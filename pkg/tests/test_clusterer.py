from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_codesign.clusterer import (diagnostics, distance_matrix, kmedoids, save_diagnostics,
                                       silhouette, swap_audit)


def _blobs(seed, m=60, k=3):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-50, 50, size=(k, 3))
    return np.concatenate([c + rng.normal(size=(m // k, 3)) for c in centres])


def _brute_force(D, k):
    return min(D[:, list(c)].min(axis=1).sum() for c in itertools.combinations(range(len(D)), k))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 40), st.integers(1, 5))
def test_pam_is_swap_optimal(seed, m, k):
    X = np.random.default_rng(seed).normal(size=(m, 3))
    D = distance_matrix(X)
    a = kmedoids(k=k, seed=seed % 1000, D=D)
    assert swap_audit(D, a) is None
    assert len(set(a.medoids.tolist())) == k
    assert all(0 <= i < m for i in a.medoids)
    assert a.labels[a.medoids].tolist() == list(range(k))
    assert a.sizes.sum() == m
    assert a.total == pytest.approx(D[:, a.medoids].min(axis=1).sum())


def test_global_optimum_on_small_sets():
    for seed in range(5):
        X = np.random.default_rng(seed).normal(size=(10, 2))
        D = distance_matrix(X)
        a = kmedoids(k=3, seed=seed, D=D)
        assert a.total >= _brute_force(D, 3) - 1e-12
    X = _blobs(0, m=12, k=3)
    D = distance_matrix(X)
    assert kmedoids(k=3, seed=1, D=D).total == pytest.approx(_brute_force(D, 3))


def test_blobs_recovered():
    X = _blobs(3)
    a = kmedoids(X, k=3, seed=0)
    assert sorted(a.sizes.tolist()) == [20, 20, 20]
    assert a.max_dist.max() < 5


def test_determinism():
    X = _blobs(1)
    a, b = kmedoids(X, k=4, seed=9), kmedoids(X, k=4, seed=9)
    assert np.array_equal(a.medoids, b.medoids) and np.array_equal(a.labels, b.labels)
    assert a.total == b.total


def test_k_equals_m_and_duplicates():
    X = np.array([[0.0], [0.0], [1.0], [5.0]])
    a = kmedoids(X, k=4, seed=0)
    assert a.total == 0.0 and sorted(a.medoids.tolist()) == [0, 1, 2, 3]
    b = kmedoids(np.zeros((5, 2)), k=3, seed=0)
    assert b.total == 0.0 and len(set(b.medoids.tolist())) == 3


def test_invalid_k_and_init():
    X = np.zeros((3, 1))
    with pytest.raises(ValueError):
        kmedoids(X, k=0)
    with pytest.raises(ValueError):
        kmedoids(X, k=4)
    with pytest.raises(ValueError):
        kmedoids(X, k=2, init=[1, 1])


def test_silhouette_matches_reference_implementation():
    metrics = pytest.importorskip("sklearn.metrics")
    X = _blobs(5, m=30)
    D = distance_matrix(X)
    for k in (2, 3, 5):
        a = kmedoids(k=k, seed=0, D=D)
        ref = metrics.silhouette_score(D, a.labels, metric="precomputed")
        assert silhouette(D, a.labels) == pytest.approx(ref, abs=1e-12)
    # singleton clusters score zero
    labels = np.array([0, 0, 0, 1])
    D2 = distance_matrix(np.array([[0.0], [1.0], [2.0], [10.0]]))
    assert silhouette(D2, labels) == pytest.approx(metrics.silhouette_score(D2, labels, metric="precomputed"))


def test_diagnostics(tmp_path):
    X = _blobs(2)
    rows = diagnostics(X, range(2, 6), seeds=[0, 1])
    assert [(r.k, r.seed) for r in rows] == [(k, s) for k in range(2, 6) for s in (0, 1)]
    best = max(rows, key=lambda r: r.silhouette)
    assert best.k == 3
    save_diagnostics(rows, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "k,seed,total,max_dist,silhouette"
    with pytest.raises(ValueError):
        diagnostics(X, [100], seeds=[0])
