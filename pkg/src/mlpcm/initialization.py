"""Starting values: hop-count geodesics, classical MDS and multi-start k-means."""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.sparse.csgraph import shortest_path

from . import updates as _up
from .types import DimensionError, Hyperparams, Network, ValidationError, VariationalState

__all__ = ["geodesic_matrix", "classical_mds", "kmeans", "initial_state", "wcss"]


def geodesic_matrix(net: Network) -> np.ndarray:
    """Hop-count distances on the binarised, symmetrised graph.

    Unreachable pairs get (largest finite distance) + 1.
    """
    n = net.n_nodes
    if n < 2:
        raise ValidationError("geodesics need at least two nodes")
    adj = (net.weights > 0) | (net.weights.T > 0)
    dist = shortest_path(adj.astype(np.float64), method="D", directed=False, unweighted=True)
    finite = np.isfinite(dist)
    fill = (dist[finite].max() if finite.any() else 0.0) + 1.0
    dist[~finite] = fill
    np.fill_diagonal(dist, 0.0)
    return dist


def classical_mds(dist: np.ndarray, d: int) -> np.ndarray:
    """Torgerson embedding as a (d, N) array.

    Axes whose eigenvalue is not positive collapse to zero. Each axis is
    flipped so that its largest-magnitude coordinate is positive.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise DimensionError("distance matrix must be square")
    if n < d:
        raise DimensionError("need at least d points for a d-dimensional embedding")
    if not np.allclose(dist, dist.T) or np.any(np.diag(dist) != 0):
        raise ValidationError("distance matrix must be symmetric with zero diagonal")
    centring = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centring @ (dist ** 2) @ centring
    gram = 0.5 * (gram + gram.T)
    vals, vecs = np.linalg.eigh(gram)
    order = np.argsort(vals)[::-1][:d]
    vals, vecs = vals[order], vecs[:, order]
    coords = vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]
    for axis in range(d):
        col = coords[:, axis]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, axis] = -col
    return coords.T.copy()


def wcss(points: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """Within-cluster sum of squares for (d, N) points and (d, K) centres."""
    diff = points - centers[:, labels]
    return float(np.sum(diff * diff))


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int) -> Tuple[np.ndarray, np.ndarray]:
    """Batched Lloyd iterations. ``centers`` is (S, d, K) for S independent starts."""
    pts = points.T  # (N, d)
    n = pts.shape[0]
    n_starts, _, k = centers.shape
    labels = np.full((n_starts, n), -1, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((pts[None, :, :, None] - centers[:, None, :, :]) ** 2, axis=2)  # (S, N, K)
        new_labels = np.argmin(dist, axis=2)
        # reseed empty clusters at the point farthest from its current centre
        for s in range(n_starts):
            counts = np.bincount(new_labels[s], minlength=k)
            if np.all(counts > 0):
                continue
            own = dist[s, np.arange(n), new_labels[s]]
            for g in np.flatnonzero(counts == 0):
                far = int(np.argmax(own))
                new_labels[s, far] = g
                own[far] = -1.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        onehot = np.zeros((n_starts, n, k))
        np.put_along_axis(onehot, labels[:, :, None], 1.0, axis=2)
        counts = onehot.sum(axis=1)  # (S, K)
        sums = np.einsum("snk,nd->sdk", onehot, pts)
        centers = sums / np.maximum(counts, 1.0)[:, None, :]
    return labels, centers


def kmeans(points: np.ndarray, k: int, n_starts: int = 1000, seed: int = 0,
           max_iter: int = 300) -> Tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from ``n_starts`` random data-point seeds; keeps the lowest WCSS.

    Returns 0-based labels (N,) and centres (d, K). Ties between starts go to
    the earliest start.
    """
    points = np.asarray(points, dtype=np.float64)
    d, n = points.shape
    if not 1 <= k <= n:
        raise ValidationError("k must lie in 1..N")
    rng = np.random.default_rng(seed)
    seeds = np.stack([rng.choice(n, size=k, replace=False) for _ in range(n_starts)])
    centers0 = np.transpose(points[:, seeds], (1, 0, 2))  # (S, d, K)
    labels, centers = _lloyd(points, centers0, max_iter)
    scores = np.array([wcss(points, labels[s], centers[s]) for s in range(n_starts)])
    best = int(np.flatnonzero(scores == scores.min())[0])
    return labels[best].copy(), centers[best].copy()


def initial_state(net: Network, hyper: Hyperparams, seed: int = 0,
                  n_starts: int = 1000) -> VariationalState:
    """Starting point for either model.

    Covert means come from MDS of the geodesic matrix, overt means copy the
    covert mean of the perceived node, cluster centres come from k-means,
    variances start at 1 and the remaining factors at their prior values.
    Responsibilities are then set by one closed-form update.
    """
    n, d, k = net.n_nodes, hyper.d, hyper.k
    u = classical_mds(geodesic_matrix(net), d)
    _, centers = kmeans(u, k, n_starts=n_starts, seed=seed)
    v = np.repeat(u[:, None, :], n, axis=1)
    state = VariationalState(
        u_tilde=u,
        sigma2_tilde=np.ones(n),
        v_tilde=v,
        varphi2_tilde=np.ones((n, n)),
        pi_tilde=np.full((k, n), 1.0 / k),
        eta_tilde=hyper.eta,
        rho2_tilde=hyper.rho2,
        mu_tilde=centers,
        omega2_tilde=np.full(k, hyper.omega2),
        xi_tilde=np.full(k, hyper.xi),
        psi_tilde=np.full(k, hyper.psi),
        a_tilde=np.full(n, hyper.a),
        b_tilde=np.full(n, hyper.b),
        delta_tilde=np.array(hyper.delta, dtype=np.float64),
    )
    state.pi_tilde = _up.update_pi_closed(state, net, hyper)
    state.validate()
    return state
