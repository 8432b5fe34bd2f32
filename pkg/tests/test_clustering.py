from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatial_pctmc.clustering import (ClusterMap, SimilarityMatrix, build_similarity, choose_k,
                                      jacobi_eigh, kmeans, njw_cluster, normalized_laplacian,
                                      spectral_decompose)
from spatial_pctmc.distances import DistanceMatrix
from spatial_pctmc.errors import AllZeroDistances, ConfigError, IsolatedVertex


def _dm(values):
    values = np.asarray(values, dtype=float)
    return DistanceMatrix(values, "mean-field", [f"l{i}" for i in range(len(values))])


def _blocks(sizes, within=0.9, across=0.01):
    n = sum(sizes)
    A = np.full((n, n), across)
    start = 0
    for s in sizes:
        A[start:start + s, start:start + s] = within
        start += s
    np.fill_diagonal(A, 0.0)
    return SimilarityMatrix(A, 1.0, [f"l{i}" for i in range(n)])


def test_similarity_examples():
    s = np.sqrt(2.0)
    A = build_similarity(_dm([[0, s, 0], [s, 0, 1], [0, 1, 0]]), sigma=1.0).values
    assert A[0, 1] == pytest.approx(np.exp(-1))
    assert A[0, 2] == 1.0
    assert np.all(np.diag(A) == 0)


def test_median_sigma():
    assert build_similarity(_dm([[0, 1, 3], [1, 0, 2], [3, 2, 0]])).sigma == 2.0
    with pytest.raises(AllZeroDistances):
        build_similarity(_dm(np.zeros((3, 3))))
    with pytest.raises(ConfigError):
        build_similarity(_dm([[0, 1], [1, 0]]), sigma=-1.0)


def test_two_node_laplacian():
    dec = spectral_decompose(SimilarityMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0))
    assert dec.eigenvalues == pytest.approx([0.0, 2.0], abs=1e-12)


def test_null_vector(rng):
    A = rng.uniform(0.1, 1, (8, 8))
    A = A + A.T
    np.fill_diagonal(A, 0)
    dec = spectral_decompose(SimilarityMatrix(A, 1.0))
    assert abs(dec.eigenvalues[0]) <= 1e-10
    v = np.sqrt(A.sum(axis=1))
    v /= np.linalg.norm(v)
    assert abs(abs(dec.eigenvectors[:, 0] @ v) - 1) <= 1e-10


@pytest.mark.parametrize("sizes", [(3, 3), (2, 4, 3), (1, 2, 2, 3)])
def test_component_count(sizes):
    sizes = [max(s, 2) for s in sizes]
    dec = spectral_decompose(_blocks(sizes, within=1.0, across=0.0))
    assert int(np.sum(dec.eigenvalues < 1e-10)) == len(sizes)


def test_isolated_vertex():
    A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0.0]])
    with pytest.raises(IsolatedVertex) as info:
        normalized_laplacian(A)
    assert info.value.index == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_jacobi_against_numpy(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    A = B + B.T
    w, U = jacobi_eigh(A)
    assert np.allclose(w, np.linalg.eigvalsh(A), atol=1e-9)
    assert np.max(np.abs(A @ U - U * w)) <= 1e-8
    assert np.max(np.abs(U.T @ U - np.eye(n))) <= 1e-8
    assert np.all(np.diff(w) >= -1e-12)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(ValueError):
        jacobi_eigh(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_choose_k_examples():
    assert choose_k([0, .01, .02, .03, .90, .95, .97, .99]) == 4
    assert choose_k([0, 1, 1.01, 1.02, 1.03]) == 2
    assert choose_k([0, 1, 2, 3, 4, 5], k_min=3) == 3
    with pytest.raises(ConfigError):
        choose_k([0, 1, 2], k_max=3)


def test_kmeans_inertia_monotone(rng):
    pts = rng.normal(size=(40, 2))
    res = kmeans(pts, 4, seed=3)
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(res.history, res.history[1:]))
    assert kmeans(pts, 4, seed=3).inertia == res.inertia


def _best_partition_inertia(points, k):
    best = np.inf
    n = len(points)
    for labels in itertools.product(range(k), repeat=n - 1):
        labels = (0,) + labels
        if len(set(labels)) != k:
            continue
        lab = np.array(labels)
        inertia = sum(np.sum((points[lab == c] - points[lab == c].mean(axis=0)) ** 2) for c in range(k))
        best = min(best, inertia)
    return best


def test_kmeans_reaches_brute_force_optimum(rng):
    centres = np.array([[0, 0], [5, 0], [0, 5]])
    pts = np.concatenate([c + 0.3 * rng.normal(size=(3, 2)) for c in centres])
    assert kmeans(pts, 3, seed=0).inertia == pytest.approx(_best_partition_inertia(pts, 3), rel=1e-9)


def test_three_blocks_recovered():
    sim = _blocks([3, 3, 3])
    dec = spectral_decompose(sim)
    assert choose_k(dec.eigenvalues) == 3
    cm = njw_cluster(sim, 3, seed=1)
    assert cm.assignment == (0, 0, 0, 1, 1, 1, 2, 2, 2)


def test_k_equals_l():
    cm = njw_cluster(_blocks([2, 3]), 5)
    assert cm.k == 5 and sorted(cm.assignment) == list(range(5))


def test_pinned_singleton():
    sim = _blocks([3, 3, 2])
    cm = njw_cluster(sim, 3, pinned=[4])
    assert cm.k == 4
    c = cm.assignment[4]
    assert cm.members(c) == [4] and 4 in cm.pinned


@settings(max_examples=10, deadline=None)
@given(st.permutations(list(range(9))))
def test_permutation_invariance(perm):
    sim = _blocks([4, 3, 2], within=0.8, across=0.05)
    base = njw_cluster(sim, 3, seed=0)
    p = np.array(perm)
    permuted = SimilarityMatrix(sim.values[np.ix_(p, p)], sim.sigma)
    cm = njw_cluster(permuted, 3, seed=0)
    groups = lambda m, idx: sorted(sorted(idx[i] for i in m.members(c)) for c in range(m.k))
    assert groups(cm, p) == groups(base, np.arange(9))


def test_cluster_map_csv(tmp_path):
    cm = ClusterMap.from_labels([2, 2, 0, 1], pinned=[3])
    assert cm.assignment == (0, 0, 1, 2)
    labels = ["a", "b", "c", "d"]
    cm.to_csv(tmp_path / "a.csv", labels)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "location,cluster,pinned"
    assert ClusterMap.from_csv(tmp_path / "a.csv", labels) == cm
    with pytest.raises(ConfigError):
        ClusterMap.from_labels([0, 0, 1], pinned=[0])


def test_isolated_vertices_become_unpinned_singletons():
    sim = _blocks([3, 3])
    A = np.zeros((7, 7))
    A[:6, :6] = sim.values
    from spatial_pctmc.clustering import isolated_vertices
    assert isolated_vertices(A, range(7)) == [6]
    cm = njw_cluster(SimilarityMatrix(A, 1.0), 2, singletons=[6])
    assert cm.k == 3 and cm.members(cm.assignment[6]) == [6] and not cm.pinned
