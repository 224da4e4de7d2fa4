"""Spectral clustering of frame embeddings with an eigengap speaker count."""

from __future__ import annotations

import numpy as np

from .numerics import sym_eig

KMEANS_ITERS = 100


def cosine_affinity(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    U = V / np.where(norms > 0, norms, 1.0)
    W = np.clip(U @ U.T, 0.0, None)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    return W


def normalized_laplacian(W: np.ndarray) -> np.ndarray:
    """I - D^-1/2 W D^-1/2; isolated nodes get a zero scaling."""
    d = W.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    L = np.eye(W.shape[0]) - inv[:, None] * W * inv[None, :]
    return 0.5 * (L + L.T)


def eigengap_k(eigenvalues: np.ndarray, k_max: int) -> int:
    """Cluster count at the largest gap among the k_max smallest eigenvalues."""
    w = np.asarray(eigenvalues)[: k_max + 1]
    if w.size < 2:
        return 1
    gaps = np.diff(w)
    return int(np.argmax(gaps)) + 1


def farthest_point_init(X: np.ndarray, k: int) -> np.ndarray:
    """Start from row 0, then repeatedly add the row farthest from all chosen
    centres (lowest index on ties)."""
    chosen = [0]
    dist = np.sum((X - X[0]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def kmeans(X: np.ndarray, k: int, iters: int = KMEANS_ITERS) -> np.ndarray:
    centres = farthest_point_init(X, k)
    labels = None
    for _ in range(iters):
        d = ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centres[j] = members.mean(axis=0)
    return labels


def spectral_cluster(V, k_max: int = 10, return_k: bool = False):
    """Cluster the rows of ``V``; returns an integer label per row.

    Labels are renumbered by first appearance so the output is canonical.
    """
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[0]
    if n < 2:
        labels = np.zeros(n, dtype=np.int64)
        return (labels, 1) if return_k else labels
    W = cosine_affinity(V)
    w, vecs = sym_eig(normalized_laplacian(W))
    k = min(eigengap_k(w, max(1, k_max)), n)
    if k == 1:
        labels = np.zeros(n, dtype=np.int64)
    else:
        X = vecs[:, :k]
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        X = X / np.where(norms > 0, norms, 1.0)
        labels = kmeans(X, k)
    _, first = np.unique(labels, return_index=True)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[labels[np.sort(first)]] = np.arange(first.size)
    labels = remap[labels]
    return (labels, k) if return_k else labels
