import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from bayesrank.ranking import (analytic_pairwise_prob, analytic_rank_variance,
                               cumulative_rankogram, expected_ranks, pcer,
                               posterior_mean_ranking, rank_credible_interval, rankogram,
                               read_summary, sucra, summarize, write_summary)
from bayesrank.sampler import ranks_from_theta


def random_rank_draws(rng, n_draws, n):
    return np.argsort(rng.random((n_draws, n)), axis=1) + 1


def test_single_proposal():
    r = np.ones((5, 1), dtype=int)
    assert expected_ranks(r)[0] == 1
    assert sucra(rankogram(r))[0] == 1


def test_symmetric_pair():
    r = np.array([[1, 2], [2, 1]] * 3)
    assert np.allclose(expected_ranks(r), 1.5)


def test_hand_enumerated_draws():
    theta = np.array([[0.1, 0.5, -1.0],
                      [0.9, 0.2, 0.0],
                      [-0.3, 0.4, 0.8],
                      [0.0, -0.1, 0.2]])
    r = ranks_from_theta(theta)
    assert r.tolist() == [[2, 1, 3], [1, 2, 3], [3, 2, 1], [2, 3, 1]]
    assert np.allclose(expected_ranks(r), [2.0, 2.0, 2.0])


def test_pcer_values():
    assert pcer(1, 100) == pytest.approx(0.5)
    assert pcer(5.5, 10) == pytest.approx(50)
    assert pcer(10, 10) == pytest.approx(95)


def test_sucra_boundaries():
    r = np.array([[1, 2, 3], [1, 3, 2]])
    s = sucra(rankogram(r))
    assert s[0] == 1.0
    r = np.array([[3, 1, 2], [3, 2, 1]])
    assert sucra(rankogram(r))[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_er_sucra_identity_and_conservation(n, draws, seed):
    r = random_rank_draws(np.random.default_rng(seed), draws, n)
    er = expected_ranks(r)
    prob = rankogram(r)
    assert np.allclose(prob.sum(axis=1), 1.0)
    cum = cumulative_rankogram(prob)
    assert np.all(np.diff(cum, axis=1) >= -1e-15) and np.allclose(cum[:, -1], 1.0)
    if n > 1:
        assert np.max(np.abs(er - (n - (n - 1) * sucra(prob)))) < 1e-10
    assert abs(er.sum() - n * (n + 1) / 2) < 1e-9
    cri = rank_credible_interval(r)
    assert np.all(cri[:, 0] <= cri[:, 1]) and cri.min() >= 1 and cri.max() <= n
    p = pcer(er, n)
    assert np.all((p > 0) & (p < 100))


def test_cri_point_mass_and_uniform():
    r = np.array([[3, 1, 2, 4]] * 10)
    assert rank_credible_interval(r)[0].tolist() == [3, 3]
    # proposal 0 uniform over 1..4
    r = np.array([[k, *[x for x in (1, 2, 3, 4) if x != k]] for k in (1, 2, 3, 4)])
    assert rank_credible_interval(r, 0.5)[0].tolist() == [2, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_cri_nesting(n, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(200, n)) + rng.normal(size=n)
    r = ranks_from_theta(theta)
    a, b = rank_credible_interval(r, 0.5), rank_credible_interval(r, 0.9)
    assert np.all(b[:, 0] <= a[:, 0]) and np.all(a[:, 1] <= b[:, 1])


def test_cri_level_checked():
    with pytest.raises(ValueError):
        rank_credible_interval(np.array([[1, 2]]), 1.0)


def test_dominance_monotone():
    rng = np.random.default_rng(5)
    theta = rng.normal(size=(500, 6))
    theta[:, 1] = theta[:, 0] - np.abs(rng.normal(size=500)) - 1e-3   # 0 always beats 1
    r = ranks_from_theta(theta)
    er, s, cri = expected_ranks(r), sucra(rankogram(r)), rank_credible_interval(r)
    assert er[0] < er[1] and s[0] > s[1]
    assert cri[0, 1] <= cri[1, 1] and cri[0, 0] <= cri[1, 0]


def test_posterior_mean_ordering():
    assert posterior_mean_ranking([0.4, -0.1, 0.9]).tolist() == [2, 0, 1]
    assert posterior_mean_ranking([0.0, 0.0, 0.0]).tolist() == [0, 1, 2]


def test_pairwise_prob_basics():
    assert analytic_pairwise_prob(0.3, 0.3, 1.0, 2.0) == pytest.approx(0.5)
    assert analytic_pairwise_prob(0.0, 50.0, 1e-4, 1e-4) == pytest.approx(1.0)
    p = analytic_pairwise_prob(0.2, -0.4, 0.5, 0.3, 0.1)
    q = analytic_pairwise_prob(-0.4, 0.2, 0.3, 0.5, 0.1)
    assert p + q == pytest.approx(1.0)
    with pytest.raises(ValueError):
        analytic_pairwise_prob(0, 1, 1.0, 1.0, 1.0)


def test_pairwise_prob_against_simulation():
    mean = np.array([0.3, 0.5])
    cov = np.array([[0.4, 0.15], [0.15, 0.3]])
    p = analytic_pairwise_prob(mean[0], mean[1], cov[0, 0], cov[1, 1], cov[0, 1])
    rng = np.random.default_rng(9)
    n = 1_000_000
    s = rng.multivariate_normal(mean, cov, size=n)
    freq = np.mean(s[:, 0] <= s[:, 1])
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)


def _min_prob(mu, sd, i, k, l):
    # P(theta_i <= min(theta_k, theta_l)) for independent normals
    f = lambda t: (norm.pdf(t, mu[i], sd[i]) * norm.sf(t, mu[k], sd[k]) * norm.sf(t, mu[l], sd[l]))
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-12)[0]


def rank_variance_inputs(mu, sd):
    n = len(mu)
    pw = np.zeros((n, n))
    pm = np.zeros((n, n, n))
    for i in range(n):
        for k in range(n):
            if i != k:
                pw[i, k] = analytic_pairwise_prob(mu[i], mu[k], sd[i] ** 2, sd[k] ** 2)
                for l in range(n):
                    if l not in (i, k):
                        pm[i, k, l] = _min_prob(mu, sd, i, k, l)
    return pw, pm


def test_rank_variance_against_simulation():
    mu, sd = np.array([0.0, 0.4, 1.0]), np.array([0.5, 0.7, 0.6])
    v = analytic_rank_variance(*rank_variance_inputs(mu, sd))
    rng = np.random.default_rng(4)
    r = ranks_from_theta(rng.normal(mu, sd, size=(1_000_000, 3)))
    # the formula counts 1 + #(better); ranks here also have 1 = largest theta
    emp = r.var(axis=0)
    assert np.all(np.abs(v - emp) / emp < 0.02)


def test_rank_variance_degenerate():
    assert analytic_rank_variance(np.ones((1, 1)), np.zeros((1, 1, 1)))[0] == 0
    # perfect separation: theta_0 < theta_1 < theta_2 surely
    pw = np.array([[1, 1, 1], [0, 1, 1], [0, 0, 1]], dtype=float)
    pm = np.zeros((3, 3, 3))
    for i in range(3):
        for k in range(3):
            for l in range(3):
                pm[i, k, l] = float(pw[i, k] and pw[i, l])
    assert np.allclose(analytic_rank_variance(pw, pm), 0)


class _FakeDraws:
    def __init__(self, theta):
        self._t = theta
        self.proposal_ids = tuple(str(i + 1) for i in range(theta.shape[1]))
        self.rank_draws = ranks_from_theta(theta)

    def theta_flat(self):
        return self._t


def test_summary_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    d = _FakeDraws(rng.normal(size=(300, 12)) + np.linspace(0, 2, 12))
    s = summarize(d, 0.5, average_score=np.arange(12.0))
    write_summary(s, tmp_path / "s.csv")
    back = read_summary(tmp_path / "s.csv")
    assert back.proposal_ids == s.proposal_ids
    assert np.array_equal(back.er, s.er) and np.array_equal(back.cri, s.cri)
    assert np.array_equal(back.sucra, s.sucra)
    assert np.array_equal(back.posterior_mean_rank, s.posterior_mean_rank)
