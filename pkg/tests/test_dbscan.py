import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vitscope.cluster import DBSCAN, NOISE, auto_eps, dbscan, pairwise_distances


def _partition(labels):
    groups = {}
    for i, c in enumerate(labels):
        if c != NOISE:
            groups.setdefault(int(c), set()).add(i)
    return sorted(frozenset(g) for g in groups.values()), {i for i, c in enumerate(labels) if c == NOISE}


def test_hand_traced_line():
    x = np.array([[0.0], [0.1], [0.2], [10.0]])
    labels, core = dbscan(pairwise_distances(x), eps=0.5, min_pts=2)
    assert labels.tolist() == [0, 0, 0, NOISE]
    assert core.tolist() == [True, True, True, False]


def test_eps_boundary_is_inclusive():
    x = np.array([[0.0], [0.5]])
    labels, _ = dbscan(pairwise_distances(x), eps=0.5, min_pts=2)
    assert labels.tolist() == [0, 0]


def test_huge_eps_and_too_many_min_pts():
    x = np.random.default_rng(0).standard_normal((12, 3))
    d = pairwise_distances(x)
    assert set(dbscan(d, 1e6, 5)[0]) == {0}
    assert set(dbscan(d, 1e6, 13)[0]) == {NOISE}
    with pytest.raises(ValueError):
        dbscan(d, 0.0, 3)
    with pytest.raises(ValueError):
        dbscan(d, 1.0, 0)


def test_border_point_goes_to_first_cluster():
    # 1.0 is within eps of one core on each side but is not itself core
    x = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 1.0, 1.8, 1.85, 1.9, 1.95, 2.0])[:, None]
    labels, core = dbscan(pairwise_distances(x), eps=0.81, min_pts=4)
    assert not core[5]
    assert labels.tolist() == [0] * 6 + [1] * 5
    flipped, _ = dbscan(pairwise_distances(x[::-1]), eps=0.81, min_pts=4)
    assert flipped.tolist() == [0] * 6 + [1] * 5


def test_cosine_distance_conventions():
    x = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    d = pairwise_distances(x, "cosine")
    assert d[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert d[0, 2] == pytest.approx(1.0)
    assert d[3, 4] == 0.0 and d[0, 3] == 1.0
    with pytest.raises(ValueError):
        pairwise_distances(x, "manhattan")


def test_auto_eps():
    x = np.arange(6, dtype=np.float64)[:, None]
    d = pairwise_distances(x)
    # third-neighbour distances are 3,2,2,2,2,3 -> median 2
    assert auto_eps(d) == pytest.approx(1.8)
    m = DBSCAN(metric="euclidean").fit(x)
    assert m.eps_ == pytest.approx(1.8)
    assert m.n_clusters_ == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.floats(0.05, 3.0), st.integers(1, 5), st.integers(0, 2**32))
def test_matches_reference(n, eps, min_pts, seed):
    x = np.random.default_rng(seed).standard_normal((n, 2))
    d = pairwise_distances(x)
    got, _ = dbscan(d, eps, min_pts)
    assert got.tolist() == oracles.dbscan_reference(d.tolist(), eps, min_pts)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32))
def test_permutation_stable(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    perm = rng.permutation(n)
    a, core_a = dbscan(pairwise_distances(x), 0.8, 3)
    b, core_b = dbscan(pairwise_distances(x[perm]), 0.8, 3)
    assert core_a[perm].tolist() == core_b.tolist()
    # map the permuted run back to original indices
    back = np.empty(n, dtype=np.int64)
    back[perm] = b
    core_back = np.empty(n, dtype=bool)
    core_back[perm] = core_b
    parts_a, noise_a = _partition(np.where(core_a, a, NOISE))
    parts_b, noise_b = _partition(np.where(core_back, back, NOISE))
    assert parts_a == parts_b
    assert _partition(a)[1] == _partition(back)[1]
    # border points with a single reachable cluster never move
    d = pairwise_distances(x)
    for i in np.flatnonzero(~core_a & (a != NOISE)):
        reach = {int(a[j]) for j in np.flatnonzero((d[i] <= 0.8) & core_a)}
        if len(reach) == 1:
            same = {int(back[j]) for j in np.flatnonzero((d[i] <= 0.8) & core_a)}
            assert same == {int(back[i])}


def test_estimator_api():
    est = DBSCAN(eps=0.5, min_samples=2, metric="euclidean")
    assert est.get_params()["min_samples"] == 2
    labels = est.fit_predict(np.array([[0.0], [0.1], [5.0]]))
    assert labels.tolist() == [0, 0, NOISE]
    assert est.core_sample_indices_.tolist() == [0, 1]
