"""Exact t-SNE (no Barnes-Hut), fine for the few hundred points of one image."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .._validation import check_embeddings

__all__ = ["joint_probabilities", "student_q", "kl_divergence", "ExactTSNE", "tsne"]

_MACHINE_EPS = np.finfo(np.float64).eps
_PERPLEXITY_STEPS = 200
_ENTROPY_TOL = 1e-5


def _conditional_p(sqdist, perplexity):
    n = sqdist.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(sqdist[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(_PERPLEXITY_STEPS):
            # shift by the nearest distance so exp() cannot underflow to all zeros
            w = np.exp(-(d - d.min()) * beta)
            s = w.sum()
            p = w / s
            entropy = np.log(s) + beta * np.dot(d - d.min(), p)
            diff = entropy - target
            if abs(diff) <= _ENTROPY_TOL:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        P[i, np.arange(n) != i] = p
    return P


def joint_probabilities(X, perplexity):
    """Symmetric ``p_ij = (p_j|i + p_i|j) / 2n`` from binary-searched bandwidths."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X * X, axis=1)
    sqdist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    cond = _conditional_p(sqdist, perplexity)
    P = (cond + cond.T) / (2.0 * X.shape[0])
    return np.maximum(P, 0.0)


def student_q(Y):
    """``(Q, num)`` with ``num_ij = 1 / (1 + |y_i - y_j|^2)`` and zero diagonal."""
    sq = np.sum(Y * Y, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Y @ Y.T, 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P, Y):
    Q, _ = student_q(np.asarray(Y, dtype=np.float64))
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], _MACHINE_EPS))))


class ExactTSNE(TransformerMixin, BaseEstimator):
    """t-SNE by gradient descent on the exact KL objective.

    Momentum is ``momentum`` during the first ``exaggeration_iter``
    iterations (with P multiplied by ``early_exaggeration``) and
    ``final_momentum`` afterwards. Per-parameter gains follow the
    delta-bar-delta rule (+0.2 / x0.8, floor ``min_gain``).
    ``learning_rate="auto"`` is ``max(n / early_exaggeration / 4, 50)``.

    After ``fit``: ``embedding_``, ``P_``, ``kl_divergence_`` and
    ``kl_history_`` (pairs ``(iteration, KL)`` every ``kl_every``
    iterations, KL always against the un-exaggerated P).
    """

    def __init__(
        self,
        n_components=2,
        perplexity=15.0,
        n_iter=1000,
        early_exaggeration=12.0,
        exaggeration_iter=250,
        learning_rate="auto",
        momentum=0.5,
        final_momentum=0.8,
        min_gain=0.01,
        init="pca",
        random_state=0,
        kl_every=50,
    ):
        self.n_components = n_components
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iter = exaggeration_iter
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.final_momentum = final_momentum
        self.min_gain = min_gain
        self.init = init
        self.random_state = random_state
        self.kl_every = kl_every

    def _initial_embedding(self, X):
        n = X.shape[0]
        rng = np.random.default_rng(self.random_state)
        if self.init == "pca":
            centered = X - X.mean(axis=0)
            U, S, Vt = np.linalg.svd(centered, full_matrices=False)
            k = min(self.n_components, len(S))
            # deterministic sign: each component's largest-magnitude loading is positive
            lead = Vt[np.arange(k), np.abs(Vt[:k]).argmax(axis=1)]
            Y = np.zeros((n, self.n_components))
            Y[:, :k] = U[:, :k] * S[:k] * np.where(lead < 0, -1.0, 1.0)
            std = Y[:, 0].std()
            if std > 0:
                # first component scaled to variance 1e-4
                return Y / std * 1e-2
        elif self.init != "random":
            raise ValueError(f"unknown init {self.init!r}")
        return rng.standard_normal((n, self.n_components)) * 1e-2

    def fit(self, X, y=None):
        X = check_embeddings(X, min_samples=2)
        n = X.shape[0]
        if not 0 < self.perplexity < n:
            raise ValueError(f"perplexity must lie in (0, n={n}), got {self.perplexity}")
        P = joint_probabilities(X, self.perplexity)
        lr = self.learning_rate
        if lr == "auto":
            lr = max(n / self.early_exaggeration / 4.0, 50.0)
        Y = self._initial_embedding(X)
        update = np.zeros_like(Y)
        gains = np.ones_like(Y)
        history = []
        for it in range(self.n_iter):
            exaggerating = it < self.exaggeration_iter
            P_eff = P * self.early_exaggeration if exaggerating else P
            mom = self.momentum if exaggerating else self.final_momentum
            Q, num = student_q(Y)
            PQ = (P_eff - Q) * num
            grad = 4.0 * (np.diag(PQ.sum(axis=1)) - PQ) @ Y
            inc = update * grad < 0.0
            gains = np.where(inc, gains + 0.2, gains * 0.8)
            np.clip(gains, self.min_gain, None, out=gains)
            update = mom * update - lr * gains * grad
            Y = Y + update
            if (it + 1) % self.kl_every == 0:
                history.append((it + 1, kl_divergence(P, Y)))
        self.P_ = P
        self.embedding_ = Y
        self.kl_history_ = history
        self.kl_divergence_ = kl_divergence(P, Y)
        self.learning_rate_ = lr
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


def tsne(X, perplexity=15.0, iterations=1000, seed=0, **kwargs):
    return ExactTSNE(perplexity=perplexity, n_iter=iterations, random_state=seed, **kwargs).fit_transform(X)
