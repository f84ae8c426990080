import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group
from sklearn.metrics import silhouette_samples as sk_silhouette_samples

import oracles
from vitscope.cluster import (
    NOISE,
    dominant_labels,
    group_cosine,
    mean_in_cluster_cosine,
    mean_in_object_cosine,
    purity,
    silhouette,
    silhouette_samples,
    unique_label_ratio,
)

TOL = 1e-12


def test_purity_examples():
    assert abs(purity([0, 0, 0, 1, 1], [1, 1, 2, 2, 2]) - 0.8) <= TOL
    assert purity([0, 0, 1, 1, 2], [3, 3, 0, 0, 5]) == 1.0
    assert purity([0, 0, 0, 0], [1, 1, 2, 2]) == 0.5
    with pytest.raises(ValueError):
        purity([], [])


def test_purity_denominators_and_noise():
    a, y = [0, 0, NOISE, 1, 1], [1, 1, 1, 2, 3]
    assert abs(purity(a, y) - 3 / 4) <= TOL
    assert abs(purity(a, y, denominator="tokens") - 3 / 5) <= TOL
    assert math.isnan(purity([NOISE, NOISE], [1, 2]))
    with pytest.raises(ValueError):
        purity(a, y, denominator="all")


def test_dominant_tie_goes_to_smaller_label():
    assert dominant_labels([0, 0], [5, 2]) == {0: (2, 1)}


def test_silhouette_hand_fixture():
    x = np.array([[0.0], [1.0], [10.0]])
    s = silhouette_samples(x, [0, 0, 1])
    np.testing.assert_allclose(s, [0.9, 8 / 9, 0.0], rtol=0, atol=TOL)
    assert abs(silhouette(x, [0, 0, 1]) - (0.9 + 8 / 9) / 3) <= TOL
    assert abs(silhouette(x, [0, 0, 1]) - 0.596296296296) < 1e-9


def test_silhouette_missing_cases():
    x = np.random.default_rng(0).standard_normal((5, 2))
    assert math.isnan(silhouette(x, [0] * 5))
    assert math.isnan(silhouette(x, [NOISE] * 5))
    s = silhouette_samples(x, [0, 0, 1, 1, NOISE])
    assert math.isnan(s[4])


def test_silhouette_separation_limit():
    scores = []
    for gap in (10.0, 100.0, 1000.0):
        x = np.array([[0.0], [1.0], [gap], [gap + 1]])
        scores.append(silhouette(x, [0, 0, 1, 1]))
    assert scores[0] < scores[1] < scores[2] < 1.0
    assert scores[2] > 0.998


@settings(max_examples=50, deadline=None)
@given(st.integers(5, 20), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_silhouette_matches_oracles(n, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    assign = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    mine = silhouette_samples(x, assign)
    assert abs(silhouette(x, assign) - oracles.silhouette_brute(x.tolist(), assign.tolist())) <= TOL
    # sklearn uses the same singleton convention
    np.testing.assert_allclose(mine, sk_silhouette_samples(x, assign), atol=1e-10)
    assert np.all((mine >= -1) & (mine <= 1))


def test_unique_label_ratio_examples():
    dog, cat = 1, 2
    assign = [0, 0, 1, 1, 2, 2]
    labels = [dog, dog, dog, cat, 0, 0]
    # cluster 1 ties dog/cat -> dog; dominated {dog, dog, background}
    assert abs(unique_label_ratio(assign, labels) - 2 / 3) <= TOL
    assert unique_label_ratio([0, 1, 2], [0, dog, cat]) == 1.0
    assert unique_label_ratio([NOISE] * 3, [0, dog, cat]) == 0.0
    assert abs(unique_label_ratio(assign, labels, mode="object_types") - 1 / 2) <= TOL
    with pytest.raises(ValueError):
        unique_label_ratio(assign, labels, mode="x")


def test_occluded_label_never_counts():
    assert unique_label_ratio([0, 0, 1], [-1, -1, 1]) == 0.5


def test_cosine_examples():
    same = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    assert abs(mean_in_cluster_cosine(same, [0, 0, 0]) - 1.0) <= TOL
    ortho = np.array([[1.0, 0.0], [0.0, 3.0]])
    assert abs(mean_in_cluster_cosine(ortho, [0, 0])) <= TOL
    diag = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert abs(mean_in_object_cosine(diag, [4, 4]) - 1 / math.sqrt(2)) <= TOL
    assert math.isnan(mean_in_object_cosine(diag, [0, 0]))


def test_cosine_equal_group_weight_and_zero_vectors():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # group A (4 identical) -> 1, group B = {0, 4} orthogonal -> 0; equal weight -> 0.5
    mean, skipped = group_cosine(x, [[0, 1, 2, 3], [0, 4]])
    assert abs(mean - 0.5) <= TOL and skipped == 0
    z = np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
    mean, skipped = group_cosine(z, [[0, 1, 2]])
    assert abs(mean - 1.0) <= TOL and skipped == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_measures_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((12, 4))
    q = special_ortho_group.rvs(4, random_state=seed)
    assign = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, NOISE, 0, 1])
    labels = rng.integers(0, 3, 12)
    xr = x @ q
    assert abs(silhouette(x, assign) - silhouette(xr, assign)) < 1e-6
    assert abs(mean_in_cluster_cosine(x, assign) - mean_in_cluster_cosine(xr, assign)) < 1e-6
    assert abs(mean_in_object_cosine(x, labels) - mean_in_object_cosine(xr, labels)) < 1e-6 or (
        math.isnan(mean_in_object_cosine(x, labels)) and math.isnan(mean_in_object_cosine(xr, labels)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-1, 3), st.integers(0, 3)), min_size=1, max_size=30))
def test_ranges(pairs):
    assign = [a for a, _ in pairs]
    labels = [b for _, b in pairs]
    p = purity(assign, labels)
    if not math.isnan(p):
        assert 0 <= p <= 1
        single = all(len(set(np.array(labels)[np.array(assign) == c])) == 1 for c in set(assign) if c != NOISE)
        assert (p == 1.0) == single
    assert 0 <= unique_label_ratio(assign, labels) <= 1
