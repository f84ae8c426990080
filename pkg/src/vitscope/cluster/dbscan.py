"""Deterministic DBSCAN over a dense distance matrix."""

from collections import deque

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin

from .._validation import check_embeddings

__all__ = ["NOISE", "pairwise_distances", "auto_eps", "dbscan", "DBSCAN"]

NOISE = -1


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms > 0


def pairwise_distances(x, metric="euclidean"):
    """Dense ``[n, n]`` distances in float64.

    ``"cosine"`` is ``1 - cos``; two zero vectors are at distance 0 and a
    zero vector is at distance 1 from any non-zero one.
    """
    x = np.asarray(x, dtype=np.float64)
    if metric == "euclidean":
        d = cdist(x, x, "euclidean")
    elif metric == "cosine":
        u, nonzero = _unit_rows(x)
        cos = np.clip(u @ u.T, -1.0, 1.0)
        both_zero = ~nonzero[:, None] & ~nonzero[None, :]
        cos = np.where(both_zero, 1.0, cos)
        d = 1.0 - cos
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(d, 0.0)
    return d


def auto_eps(dist, k=3, scale=0.9, floor=1e-9):
    """``scale`` times the median distance to each point's ``k``-th nearest neighbour."""
    n = dist.shape[0]
    if n < 2:
        return floor
    kk = min(k, n - 1)
    # column 0 of the sorted rows is the point itself
    kth = np.sort(dist, axis=1)[:, kk]
    return max(float(np.median(kth)) * scale, floor)


def dbscan(dist, eps, min_pts):
    """Cluster from a precomputed distance matrix.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps`` (inclusive). Seeds are visited in ascending index order
    and each cluster is grown breadth-first, so a border point reachable from
    several clusters joins the one whose core point reaches it first.

    Returns ``(labels, core_mask)``; labels are contiguous from 0, noise -1.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    dist = np.asarray(dist)
    n = dist.shape[0]
    within = dist <= eps
    neighbours = [np.flatnonzero(row) for row in within]
    core = within.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in neighbours[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels, core


class DBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN with a data-driven default radius.

    Parameters
    ----------
    eps : float or "auto"
        Neighbourhood radius. ``"auto"`` uses ``eps_scale`` times the median
        ``eps_k``-th nearest-neighbour distance of the data being fit.
    min_samples : int
        Neighbours (self included) required for a core point.
    metric : {"cosine", "euclidean"}
    """

    def __init__(self, eps="auto", min_samples=3, metric="cosine", eps_k=3, eps_scale=0.9):
        self.eps = eps
        self.min_samples = min_samples
        self.metric = metric
        self.eps_k = eps_k
        self.eps_scale = eps_scale

    def fit(self, X, y=None):
        X = check_embeddings(X)
        dist = pairwise_distances(X, self.metric)
        if self.eps == "auto":
            self.eps_ = auto_eps(dist, self.eps_k, self.eps_scale)
        else:
            self.eps_ = float(self.eps)
        self.labels_, core = dbscan(dist, self.eps_, self.min_samples)
        self.core_sample_indices_ = np.flatnonzero(core)
        self.n_clusters_ = int(self.labels_.max() + 1) if len(self.labels_) else 0
        return self
