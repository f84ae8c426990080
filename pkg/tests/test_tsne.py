import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from vitscope.cluster import ExactTSNE, joint_probabilities, kl_divergence, student_q, tsne


def test_joint_probabilities_are_symmetric_and_normalized():
    x = np.random.default_rng(0).standard_normal((30, 5))
    P = joint_probabilities(x, 10)
    np.testing.assert_allclose(P, P.T)
    assert P.sum() == pytest.approx(1.0)
    assert np.all(np.diag(P) == 0)


def test_bandwidth_matches_perplexity():
    from vitscope.cluster.tsne import _conditional_p

    x = np.random.default_rng(1).standard_normal((40, 3))
    cond = _conditional_p(squareform(pdist(x, "sqeuclidean")), 12.0)
    for row in cond:
        p = row[row > 0]
        assert np.exp(-np.sum(p * np.log(p))) == pytest.approx(12.0, rel=1e-4)


def test_student_q():
    Q, num = student_q(np.array([[0.0, 0.0], [1.0, 0.0]]))
    np.testing.assert_allclose(num, [[0, 0.5], [0.5, 0]])
    np.testing.assert_allclose(Q, [[0, 0.5], [0.5, 0]])


def test_regular_simplex_stays_regular():
    y = tsne(np.eye(4), perplexity=2, seed=0, n_components=3)
    d = pdist(y)
    assert (d.max() - d.min()) / d.mean() < 0.1
    y3 = tsne(np.eye(3), perplexity=1.5, seed=0)
    d3 = pdist(y3)
    assert (d3.max() - d3.min()) / d3.mean() < 0.1


def test_identical_points_are_closest_pair():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((25, 6)) * 3
    x[7] = x[3]
    y = tsne(x, perplexity=5, seed=0)
    d = squareform(pdist(y))
    np.fill_diagonal(d, np.inf)
    assert np.unravel_index(d.argmin(), d.shape) in ((3, 7), (7, 3))


def test_kl_decreases_after_exaggeration():
    x = np.random.default_rng(3).standard_normal((60, 10))
    est = ExactTSNE(perplexity=15, random_state=0).fit(x)
    hist = dict(est.kl_history_)
    assert hist[1000] <= hist[250]
    assert est.kl_divergence_ == pytest.approx(kl_divergence(est.P_, est.embedding_))
    assert est.learning_rate_ == 50.0


def test_deterministic_and_pca_scale():
    x = np.random.default_rng(4).standard_normal((20, 4))
    a = ExactTSNE(perplexity=5, n_iter=0).fit(x).embedding_
    assert a[:, 0].var() == pytest.approx(1e-4)
    b1 = tsne(x, perplexity=5, iterations=100, seed=1)
    b2 = tsne(x, perplexity=5, iterations=100, seed=1)
    assert b1.tobytes() == b2.tobytes()


def test_parameter_errors():
    x = np.zeros((5, 2)) + np.arange(5)[:, None]
    with pytest.raises(ValueError):
        tsne(x, perplexity=5)
    with pytest.raises(ValueError):
        ExactTSNE(init="spectral", perplexity=2).fit(x)
