import itertools

import numpy as np
import pytest

from aed_eend.cluster import (
    cosine_affinity,
    eigengap_k,
    farthest_point_init,
    kmeans,
    normalized_laplacian,
    spectral_cluster,
)


def bundles(k, n_per, dim, sigma, rng):
    dirs = np.linalg.qr(rng.normal(size=(dim, dim)))[0][:k]  # orthonormal directions
    X = np.concatenate([d + rng.normal(0, sigma, (n_per, dim)) for d in dirs])
    truth = np.repeat(np.arange(k), n_per)
    order = rng.permutation(len(X))
    return X[order], truth[order]


def same_partition(a, b):
    """True when labelings a and b agree up to a relabeling."""
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def test_identical_rows_one_cluster():
    assert spectral_cluster(np.tile([1.0, 2.0, 3.0], (12, 1))).tolist() == [0] * 12


def test_orthogonal_bundles_split_exactly():
    rng = np.random.default_rng(0)
    X = np.concatenate([np.tile([1.0, 0, 0], (10, 1)), np.tile([0, 1.0, 0], (10, 1))])
    X += rng.normal(0, 1e-3, X.shape)
    labels = spectral_cluster(X)
    assert labels.tolist() == [0] * 10 + [1] * 10


def test_fewer_than_two_rows():
    assert spectral_cluster(np.ones((1, 4))).tolist() == [0]
    labels, k = spectral_cluster(np.ones((0, 4)), return_k=True)
    assert labels.size == 0 and k == 1


@pytest.mark.parametrize("k", [2, 3, 4])
def test_recovers_separated_bundles(k):
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 * k + seed)
        X, truth = bundles(k, 15, 16, 0.05, rng)
        labels, k_hat = spectral_cluster(X, return_k=True)
        assert same_partition(labels, truth), seed
        hits += k_hat == k
    assert hits >= 95


def test_labels_canonical_first_appearance():
    rng = np.random.default_rng(2)
    X, _ = bundles(3, 8, 10, 0.05, rng)
    labels = spectral_cluster(X)
    firsts = [int(np.flatnonzero(labels == c)[0]) for c in range(labels.max() + 1)]
    assert firsts == sorted(firsts)
    assert labels[0] == 0


def test_deterministic():
    rng = np.random.default_rng(3)
    X, _ = bundles(3, 10, 12, 0.2, rng)
    assert np.array_equal(spectral_cluster(X), spectral_cluster(X))


def test_affinity_properties():
    rng = np.random.default_rng(4)
    V = rng.normal(size=(9, 5))
    W = cosine_affinity(V)
    assert np.array_equal(W, W.T)
    assert np.all(W >= 0) and np.all(np.diag(W) == 0)
    assert W.max() <= 1.0 + 1e-12
    L = normalized_laplacian(W)
    w = np.linalg.eigvalsh(L)
    assert w.min() >= -1e-10 and w.max() <= 2 + 1e-10


def test_eigengap():
    assert eigengap_k(np.array([0.0, 0.0, 0.0, 0.9, 1.0, 1.1]), 10) == 3
    assert eigengap_k(np.array([0.0, 0.5, 0.6, 5.0]), 2) == 1
    assert eigengap_k(np.array([0.0]), 10) == 1


def test_farthest_point_init_brute_force():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20, 3))
    centres = farthest_point_init(X, 4)
    chosen = [0]
    for _ in range(3):
        best = max(range(20), key=lambda i: (min(np.sum((X[i] - X[c]) ** 2) for c in chosen), -i))
        chosen.append(best)
    assert np.array_equal(centres, X[chosen])


def test_kmeans_on_separated_points():
    X = np.array([[0.0, 0], [0.1, 0], [5, 5], [5.1, 5], [0, 0.1]])
    labels = kmeans(X, 2)
    assert len({labels[0], labels[1], labels[4]}) == 1
    assert labels[2] == labels[3] != labels[0]
