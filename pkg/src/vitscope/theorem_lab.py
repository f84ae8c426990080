"""Numerical checks of diameter contraction under row-stochastic attention.

With the value map fixed to the identity, one attention step replaces every
embedding by a convex combination of all embeddings::

    Z' = A @ Z          (A[j, k] is the weight of token k in output j)

so the point-set diameter cannot grow. With a partition of the tokens and
cross-cluster weights confined to ``(eps_l, eps_u)``, the diameter of
cluster ``m`` obeys::

    d(Z'_m) <= (1 - A_m eps_l)^2 d(Z_m) + A_m eps_u d(Z) (A_m eps_u + 2)

with ``A_m = N + 1 - N_m`` the number of tokens outside the cluster.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_row_stochastic
from .exceptions import InfeasibleInstanceError, NotStochasticError, ShapeError

__all__ = [
    "DynamicsInstance",
    "ClusterBound",
    "BoundReport",
    "ContractionReport",
    "attention_step",
    "diameter",
    "random_stochastic",
    "verify_contraction",
    "make_clustered_instance",
    "verify_bound",
    "verify_bound_trials",
    "iterate_dynamics",
    "Trajectory",
    "write_trajectory_csv",
]

TOL = 1e-9


@dataclass
class DynamicsInstance:
    Z: np.ndarray
    A: np.ndarray
    partition: list = None
    eps_l: float = 0.0
    eps_u: float = 0.0

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.Z.ndim != 2 or self.A.shape != (len(self.Z), len(self.Z)):
            raise ShapeError(f"Z {self.Z.shape} and A {self.A.shape} are incompatible")
        if not check_row_stochastic(self.A, TOL):
            raise NotStochasticError("A must be row-stochastic (rows sum to 1 within 1e-9)")
        if self.partition is not None:
            self.partition = [sorted(int(i) for i in g) for g in self.partition]
            self.check_partition()

    def check_partition(self):
        """Validate the partition and the cross-cluster attention bounds.

        Bounds are checked as ``eps_l <= a <= eps_u`` so the decoupled limit
        ``eps_l = eps_u = 0`` is admissible.
        """
        n = len(self.Z)
        flat = sorted(i for g in self.partition for i in g)
        if flat != list(range(n)):
            raise ValueError("partition must cover every token exactly once")
        if not 0 <= self.eps_l <= self.eps_u:
            raise ValueError(f"need 0 <= eps_l <= eps_u, got {self.eps_l}, {self.eps_u}")
        owner = np.empty(n, dtype=np.int64)
        for m, g in enumerate(self.partition):
            owner[g] = m
        cross = owner[:, None] != owner[None, :]
        vals = self.A[cross]
        if len(vals) and (vals.min() < self.eps_l - TOL or vals.max() > self.eps_u + TOL):
            raise ValueError(
                f"cross-cluster attention spans [{vals.min():.3g}, {vals.max():.3g}], "
                f"outside [{self.eps_l}, {self.eps_u}]"
            )


def attention_step(inst):
    return inst.A @ inst.Z


def diameter(points):
    """Largest pairwise Euclidean distance, by brute force over all pairs."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))


def random_stochastic(n, rng):
    """Rows drawn from a symmetric Dirichlet(1)."""
    return rng.dirichlet(np.ones(n), size=n)


@dataclass
class ContractionReport:
    trials: int
    violations: list
    max_ratio: float
    identity_ratio: float
    uniform_ratio: float

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "trials": self.trials,
            "violations": self.violations,
            "max_ratio": self.max_ratio,
            "identity_ratio": self.identity_ratio,
            "uniform_ratio": self.uniform_ratio,
        }


def verify_contraction(trials=1000, n_range=(2, 32), d_range=(1, 16), seed=0):
    """Random (Z, Dirichlet A) trials of ``d(A Z) <= d(Z) + 1e-9``.

    Also runs one identity-A and one uniform-A trial, whose ratios are
    reported separately (exactly 1 and 0 respectively in exact arithmetic).
    """
    rng = np.random.default_rng(seed)
    violations = []
    max_ratio = 0.0
    for t in range(trials):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        Z = rng.standard_normal((n, d)) * rng.uniform(0.1, 10.0)
        A = random_stochastic(n, rng)
        before, after = diameter(Z), diameter(A @ Z)
        if after > before + TOL:
            violations.append({"trial": t, "n": n, "d": d, "before": before, "after": after})
        if before > 0:
            max_ratio = max(max_ratio, after / before)
    Z = rng.standard_normal((8, 4))
    identity_ratio = diameter(np.eye(8) @ Z) / diameter(Z)
    uniform_ratio = diameter(np.full((8, 8), 1 / 8) @ Z) / diameter(Z)
    return ContractionReport(trials, violations, max_ratio, identity_ratio, uniform_ratio)


def make_clustered_instance(cluster_sizes, D, eps_l, eps_u, seed=0, spread=0.1, separation=5.0):
    """Random instance satisfying the clustered-attention hypothesis.

    Each row's cross-cluster entries are uniform on ``[eps_l, eps_u)``; the
    remaining mass goes to the row's own cluster via a Dirichlet(1) draw.
    Cluster centers are random directions at norm ``separation`` (equal norms,
    as after layer norm); points add Gaussian noise of scale ``spread``.
    """
    sizes = [int(s) for s in cluster_sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("cluster sizes must be positive")
    if eps_l > eps_u or eps_l < 0:
        raise ValueError(f"need 0 <= eps_l <= eps_u, got {eps_l}, {eps_u}")
    n = sum(sizes)
    for s in sizes:
        outside = n - s
        if outside * eps_u >= 1:
            raise InfeasibleInstanceError(
                f"infeasible: cluster of size {s} has {outside} outside tokens, "
                f"{outside} * eps_u = {outside * eps_u:g} >= 1"
            )
    rng = np.random.default_rng(seed)
    bounds = np.cumsum([0] + sizes)
    partition = [list(range(bounds[m], bounds[m + 1])) for m in range(len(sizes))]
    A = np.zeros((n, n))
    Z = np.empty((n, D))
    for g in partition:
        center = rng.standard_normal(D)
        center *= separation / np.linalg.norm(center)
        Z[g] = center + rng.standard_normal((len(g), D)) * spread
        inside = np.zeros(n, dtype=bool)
        inside[g] = True
        for j in g:
            cross = rng.uniform(eps_l, eps_u, size=n - len(g))
            A[j, ~inside] = cross
            A[j, inside] = rng.dirichlet(np.ones(len(g))) * (1.0 - cross.sum())
    # rounding can leave row sums a few ulp from 1
    A /= A.sum(axis=1, keepdims=True)
    return DynamicsInstance(Z=Z, A=A, partition=partition, eps_l=eps_l, eps_u=eps_u)


@dataclass
class ClusterBound:
    cluster: int
    size: int
    outside: int
    d_before: float
    d_after: float
    rhs: float
    rhs_quadratic: float
    satisfied: bool


@dataclass
class BoundReport:
    d_global: float
    clusters: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.satisfied for c in self.clusters)


def verify_bound(inst):
    """Evaluate the per-cluster bound for one step of ``inst``.

    ``rhs_quadratic`` is the variant with ``[A_m eps_u d(Z) + 2]`` in the
    last factor, reported for comparison only.
    """
    if inst.partition is None:
        raise ValueError("verify_bound needs a partition")
    inst.check_partition()
    Z_next = attention_step(inst)
    d_all = diameter(inst.Z)
    n = len(inst.Z)
    report = BoundReport(d_global=d_all)
    for m, g in enumerate(inst.partition):
        am = n - len(g)
        d_before = diameter(inst.Z[g])
        d_after = diameter(Z_next[g])
        in_term = (1 - am * inst.eps_l) ** 2 * d_before
        rhs = in_term + am * inst.eps_u * d_all * (am * inst.eps_u + 2)
        rhs_main = in_term + am * inst.eps_u * d_all * (am * inst.eps_u * d_all + 2)
        report.clusters.append(
            ClusterBound(m, len(g), am, d_before, d_after, rhs, rhs_main, d_after <= rhs + TOL)
        )
    return report


def verify_bound_trials(instances=500, seed=0, max_tokens=32, d_range=(1, 16)):
    """Random feasible instances; returns ``(n_checked, violations)``."""
    rng = np.random.default_rng(seed)
    violations = []
    checked = 0
    while checked < instances:
        m = int(rng.integers(1, 6))
        sizes = rng.integers(1, max(2, max_tokens // m) + 1, size=m)
        n = int(sizes.sum())
        worst_outside = n - int(sizes.min())
        eps_u = rng.uniform(0.0, 1.0 / max(worst_outside, 1)) * 0.999
        eps_l = rng.uniform(0.0, eps_u)
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        inst = make_clustered_instance(
            sizes, d, eps_l, eps_u, seed=int(rng.integers(2**31)),
            spread=rng.uniform(0.01, 1.0), separation=rng.uniform(0.5, 10.0),
        )
        rep = verify_bound(inst)
        checked += 1
        for c in rep.clusters:
            if not c.satisfied:
                violations.append({"instance": checked - 1, "cluster": c.cluster,
                                   "d_after": c.d_after, "rhs": c.rhs})
    return checked, violations


@dataclass
class Trajectory:
    """``diameters[t]`` and ``cluster_diameters[t][m]`` for ``t = 0..steps``."""

    diameters: list
    cluster_diameters: list
    mode: str


def iterate_dynamics(inst, steps, mode="fixed", seed=0, temperature=1.0):
    """Repeat the attention step, recording global and per-cluster diameters.

    ``mode="fixed"`` reuses ``inst.A``; ``mode="per-step"`` recomputes
    ``A = softmax(Z W_Q (Z W_K)^T / sqrt(D))`` each step with
    ``W_Q = W_K = temperature * Q`` for a seeded random orthogonal ``Q``, so
    the logits are a scaled similarity of the embeddings.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if mode not in ("fixed", "per-step"):
        raise ValueError(f"unknown mode {mode!r}")
    Z = inst.Z.copy()
    D = Z.shape[1]
    groups = inst.partition or [list(range(len(Z)))]
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((D, D)))
    W = Q * np.sign(np.diag(R)) * temperature
    diam = [diameter(Z)]
    per = [[diameter(Z[g]) for g in groups]]
    for _ in range(steps):
        if mode == "fixed":
            A = inst.A
        else:
            P = Z @ W
            logits = P @ P.T / math.sqrt(D)
            logits -= logits.max(axis=1, keepdims=True)
            A = np.exp(logits)
            A /= A.sum(axis=1, keepdims=True)
        Z = A @ Z
        diam.append(diameter(Z))
        per.append([diameter(Z[g]) for g in groups])
    return Trajectory(diam, per, mode)


def write_trajectory_csv(path, traj):
    """One row per (step >= 1, cluster)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "cluster", "cluster_diameter", "diameter"))
        for t in range(1, len(traj.diameters)):
            for m, dm in enumerate(traj.cluster_diameters[t]):
                w.writerow((t, m, repr(dm), repr(traj.diameters[t])))
