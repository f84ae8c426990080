"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import ShapeError


def check_embeddings(X, min_samples=1):
    """2-D finite float64 array with at least ``min_samples`` rows."""
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples)


def check_assignment(labels, n=None):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n is not None and len(labels) != n:
        raise ShapeError(f"expected {n} cluster labels, got {len(labels)}")
    return labels


def check_row_stochastic(A, atol=1e-9):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"attention must be square, got {A.shape}")
    return bool(np.all(A >= 0) and np.all(np.abs(A.sum(axis=1) - 1.0) <= atol))
