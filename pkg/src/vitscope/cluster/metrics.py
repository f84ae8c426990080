"""Clustering quality measures for per-layer patch embeddings.

``assignment`` holds DBSCAN cluster ids (``-1`` = noise, ignored by every
measure). ``labels`` holds ground-truth ids per vector: 0 background,
positive ids objects, ``-1`` occluded (its own category, never an object).
"""

import math

import numpy as np

from .._validation import check_assignment, check_embeddings
from .dbscan import NOISE, pairwise_distances

__all__ = [
    "dominant_labels",
    "purity",
    "silhouette_samples",
    "silhouette",
    "unique_label_ratio",
    "group_cosine",
    "mean_in_cluster_cosine",
    "mean_in_object_cosine",
]

_DROPPED = -1


def _clusters(assignment):
    ids = np.unique(assignment)
    return [int(c) for c in ids if c != NOISE]


def dominant_labels(assignment, labels):
    """``{cluster: (label, count)}`` for the most frequent label; ties -> smaller label."""
    assignment = check_assignment(assignment)
    labels = check_assignment(labels, len(assignment))
    out = {}
    for c in _clusters(assignment):
        vals, counts = np.unique(labels[assignment == c], return_counts=True)
        best = int(np.argmax(counts))
        out[c] = (int(vals[best]), int(counts[best]))
    return out


def purity(assignment, labels, denominator="clustered"):
    """Sum over clusters of the dominant-label count, divided by the point count.

    ``denominator="clustered"`` divides by the non-noise points; ``"tokens"``
    divides by all points (noise adds nothing to the numerator). NaN when no
    point is clustered.
    """
    assignment = check_assignment(assignment)
    if len(assignment) == 0:
        raise ValueError("purity of an empty assignment is undefined")
    dom = dominant_labels(assignment, labels)
    hits = sum(count for _, count in dom.values())
    if denominator == "clustered":
        total = int(np.sum(assignment != NOISE))
    elif denominator == "tokens":
        total = len(assignment)
    else:
        raise ValueError(f"unknown purity denominator {denominator!r}")
    return hits / total if total else math.nan


def silhouette_samples(X, assignment, metric="euclidean"):
    """Per-point silhouette for clustered points (noise -> NaN, singletons -> 0)."""
    X = check_embeddings(X)
    assignment = check_assignment(assignment, len(X))
    clusters = _clusters(assignment)
    out = np.full(len(X), np.nan)
    if len(clusters) < 2:
        return out
    dist = pairwise_distances(X, metric)
    members = {c: np.flatnonzero(assignment == c) for c in clusters}
    for c, idx in members.items():
        if len(idx) == 1:
            out[idx] = 0.0
            continue
        for i in idx:
            a = dist[i, idx].sum() / (len(idx) - 1)
            b = min(dist[i, other].mean() for o, other in members.items() if o != c)
            m = max(a, b)
            out[i] = (b - a) / m if m > 0 else 0.0
    return out


def silhouette(X, assignment, metric="euclidean"):
    """Mean silhouette over clustered points; NaN with fewer than two clusters."""
    s = silhouette_samples(X, assignment, metric)
    s = s[~np.isnan(s)]
    return float(s.mean()) if len(s) else math.nan


def unique_label_ratio(assignment, labels, mode="objects_plus_one"):
    """Distinct cluster-dominating labels over the number of labels in the image.

    ``"objects_plus_one"`` counts background and objects against
    (objects + 1); ``"object_types"`` counts only object labels against the
    number of objects.
    """
    labels = check_assignment(labels)
    objects = {int(v) for v in np.unique(labels) if v > 0}
    dominated = {lab for lab, _ in dominant_labels(assignment, labels).values() if lab != _DROPPED}
    if mode == "objects_plus_one":
        return len(dominated) / (len(objects) + 1)
    if mode == "object_types":
        hit = {lab for lab in dominated if lab > 0}
        return len(hit) / len(objects) if objects else 0.0
    raise ValueError(f"unknown unique-label mode {mode!r}")


def group_cosine(X, groups):
    """Equal-weight mean over groups of the mean pairwise cosine within each group.

    Groups with fewer than two members are skipped, as are pairs involving a
    zero vector. Returns ``(mean, skipped_pairs)``; mean is NaN if nothing
    contributes.
    """
    X = check_embeddings(X)
    norms = np.linalg.norm(X, axis=1)
    group_means = []
    skipped = 0
    for idx in groups:
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) < 2:
            continue
        ok = idx[norms[idx] > 0]
        n_bad = len(idx) - len(ok)
        skipped += n_bad * (len(idx) - n_bad) + n_bad * (n_bad - 1) // 2
        if len(ok) < 2:
            continue
        u = X[ok] / norms[ok][:, None]
        cos = np.clip(u @ u.T, -1.0, 1.0)
        iu = np.triu_indices(len(ok), k=1)
        group_means.append(float(cos[iu].mean()))
    mean = float(np.mean(group_means)) if group_means else math.nan
    return mean, skipped


def mean_in_cluster_cosine(X, assignment):
    assignment = check_assignment(assignment)
    return group_cosine(X, [np.flatnonzero(assignment == c) for c in _clusters(assignment)])[0]


def mean_in_object_cosine(X, labels):
    labels = check_assignment(labels)
    objects = [int(v) for v in np.unique(labels) if v > 0]
    return group_cosine(X, [np.flatnonzero(labels == o) for o in objects])[0]
