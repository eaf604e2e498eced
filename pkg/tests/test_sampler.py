import math

import numpy as np
import pytest
from scipy.stats import norm

from bayesrank.data import (McmcConfig, ModelConfig, PriorConfig, ScoreDataset, ScoreRecord,
                            dataset_from_matrix)
from bayesrank.ranking import expected_ranks
from bayesrank.sampler import (ParameterState, gibbs_step, initial_state, log_likelihood,
                               run_sampler)


def _state(ds, **kw):
    s = ParameterState(theta=np.zeros(ds.n_proposals), lam=np.zeros(ds.n_obs),
                       nu=np.zeros(ds.n_assessors), delta=np.zeros(1), sigma=1.0,
                       tau_theta=1.0, tau_lambda=1.0, tau_delta=1.0)
    for k, v in kw.items():
        setattr(s, k, v)
    return s


def test_loglik_single_record():
    ds = ScoreDataset((ScoreRecord("1", "a", 4),))
    assert log_likelihood(_state(ds), ds, ModelConfig()) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_loglik_doubling_sigma():
    ds = ScoreDataset((ScoreRecord("1", "a", 4), ScoreRecord("2", "a", 4)))
    a = log_likelihood(_state(ds), ds, ModelConfig())
    b = log_likelihood(_state(ds, sigma=2.0), ds, ModelConfig())
    assert a - b == pytest.approx(2 * math.log(2))


@pytest.mark.parametrize("outcome,residuals,panel", [
    ("continuous", "homogeneous", False), ("continuous", "heterogeneous", False),
    ("ordinal", "homogeneous", False), ("continuous", "homogeneous", True)])
def test_loglik_matches_naive(outcome, residuals, panel):
    rng = np.random.default_rng(7)
    y = rng.integers(1, 7, size=(5, 3)).astype(float)
    y[0, 1] = np.nan
    ds = dataset_from_matrix(y, panels=["A", "A", "B", "B", "B"] if panel else None)
    cfg = ModelConfig(outcome=outcome, residuals=residuals, panel_effect=panel)
    st = initial_state(ds, cfg, PriorConfig(), rng)
    st.theta = rng.normal(size=5)
    st.lam = rng.normal(size=ds.n_obs)
    st.delta = rng.normal(size=st.delta.size)
    if residuals == "heterogeneous":
        st.alpha, st.beta, st.omega = -0.3, 0.4, rng.normal(size=5) * 0.2
    total = 0.0
    for o, r in enumerate(ds.records):
        i = ds.proposal_ids.index(r.proposal_id)
        mean = ds.grand_mean + st.theta[i] + st.lam[o]
        if panel:
            mean += st.delta[ds.panel_ids.index(r.panel_id)]
        if residuals == "heterogeneous":
            ybar_i = np.mean([q.score for q in ds.records if q.proposal_id == r.proposal_id])
            sd = math.sqrt(math.exp(st.alpha + st.beta * math.log(ybar_i) + st.omega[i]))
        else:
            sd = st.sigma
        obs = st.latent_x[o] if outcome == "ordinal" else r.score
        total += norm.logpdf(obs, mean, sd)
    assert log_likelihood(st, ds, cfg) == pytest.approx(total, abs=1e-12)


def test_dimension_mismatch():
    ds = ScoreDataset((ScoreRecord("1", "a", 4), ScoreRecord("2", "a", 3)))
    with pytest.raises(ValueError):
        log_likelihood(_state(ds, theta=np.zeros(3)), ds, ModelConfig())


CONJ_FIXED = ("lambda", "nu", "tau_theta", "tau_lambda", "sigma")


def conjugate_theta_draws(n_draws=100_000, seed=0):
    # one assessor, residuals y - ybar = +1 and -1; theta_1 | rest ~ N(0.5, 0.5)
    ds = ScoreDataset((ScoreRecord("1", "a", 4), ScoreRecord("2", "a", 2)))
    init = _state(ds)
    d = run_sampler(ds, ModelConfig(), PriorConfig(),
                    McmcConfig(n_chains=1, n_iter=n_draws + 1, n_burnin=1, n_adapt=0,
                               max_total_iter=n_draws + 1, master_seed=seed),
                    fixed=CONJ_FIXED, init=init)
    return d.theta[0, :, 0]


def test_conjugate_theta_moments():
    x = conjugate_theta_draws()
    n = x.size
    assert abs(x.mean() - 0.5) < 3 * math.sqrt(0.5 / n)
    # var of the sample variance of a normal is 2 sigma^4 / (n - 1)
    assert abs(x.var(ddof=1) - 0.5) < 3 * math.sqrt(2 * 0.25 / (n - 1))


def test_gibbs_step_fixed_blocks_untouched():
    ds = dataset_from_matrix(np.array([[3.0, 4.0], [5.0, 2.0], [6.0, 6.0]]))
    st = initial_state(ds, ModelConfig(), PriorConfig())
    new = gibbs_step(st, ds, ModelConfig(), PriorConfig(), np.random.default_rng(0),
                     fixed=("nu", "sigma"))
    assert np.array_equal(new.nu, st.nu) and new.sigma == st.sigma
    assert not np.array_equal(new.theta, st.theta)
    assert np.array_equal(st.theta, initial_state(ds, ModelConfig(), PriorConfig()).theta)


def test_ordinal_latent_respects_lowest_grade():
    y = np.array([[1.0, 1.0], [1.0, 2.0], [3.0, 6.0], [4.0, 5.0]])
    ds = dataset_from_matrix(y)
    cfg = ModelConfig(outcome="ordinal")
    rng = np.random.default_rng(1)
    st = initial_state(ds, cfg, PriorConfig(), rng)
    lowest = ds.scores == 1
    for _ in range(300):
        st = gibbs_step(st, ds, cfg, PriorConfig(), rng)
        assert np.all(st.latent_x[lowest] <= st.cutoffs[0])
        lv = ds.scores.astype(int)
        c = np.concatenate([[-np.inf], st.cutoffs, [np.inf]])
        assert np.all((c[lv - 1] < st.latent_x) & (st.latent_x <= c[lv]))


def test_cutoffs_stay_ordered(generated_ds):
    d = run_sampler(generated_ds, ModelConfig(outcome="ordinal"), PriorConfig(),
                    McmcConfig(n_chains=1, n_iter=10_000, n_burnin=1, n_adapt=0,
                               max_total_iter=10_000, master_seed=4))
    assert np.all(np.diff(d.cutoffs[0], axis=1) > 0)


def test_determinism(generated_ds, quick_mcmc):
    a = run_sampler(generated_ds, mcmc=quick_mcmc)
    b = run_sampler(generated_ds, mcmc=quick_mcmc)
    assert np.array_equal(a.theta, b.theta) and a.seeds == b.seeds
    init = initial_state(generated_ds, ModelConfig(), PriorConfig(), np.random.default_rng(0))
    # identical starting states and identical seeds give identical chains
    one = McmcConfig(n_chains=1, n_iter=300, n_burnin=100, n_adapt=0, max_total_iter=300)
    x = run_sampler(generated_ds, mcmc=one, init=init)
    y = run_sampler(generated_ds, mcmc=one, init=init)
    assert np.array_equal(x.theta, y.theta)


def test_rank_draws_are_permutations(generated_ds, quick_mcmc):
    d = run_sampler(generated_ds, mcmc=quick_mcmc)
    r = d.rank_draws
    assert r.shape == (quick_mcmc.n_chains * quick_mcmc.n_keep, generated_ds.n_proposals)
    assert np.all(np.sort(r, axis=1) == np.arange(1, r.shape[1] + 1))
    n = generated_ds.n_proposals
    assert abs(expected_ranks(d).sum() - n * (n + 1) / 2) < 1e-9


def test_thinning_count(generated_ds):
    cfg = McmcConfig(n_chains=2, n_iter=1000, n_burnin=400, n_adapt=50, thin=7,
                     max_total_iter=1000)
    d = run_sampler(generated_ds, mcmc=cfg)
    assert d.theta.shape[1] == len(range(400, 1000, 7))


@pytest.mark.slow
def test_default_budget_converges(generated_ds):
    d = run_sampler(generated_ds, mcmc=McmcConfig(master_seed=3))
    assert d.converged and max(d.rhat.values()) <= 1.1 and d.attempts == 1


def test_shrinkage_toward_zero():
    y = np.array([[6.0, 5.0, 6.0], [1.0, 2.0, 2.0], [3.0, 4.0, 3.0], [4.0, 4.0, 5.0]])
    ds = dataset_from_matrix(y)
    init = _state(ds, sigma=0.8, tau_theta=0.7)
    d = run_sampler(ds, mcmc=McmcConfig(n_chains=2, n_iter=6000, n_burnin=1000, n_adapt=0,
                                        max_total_iter=6000),
                    fixed=("lambda", "nu"), init=init)
    post = d.theta_flat().mean(axis=0)
    raw = ds.proposal_means() - ds.grand_mean
    assert np.all(np.abs(post) < np.abs(raw)) and np.all(np.sign(post) == np.sign(raw))


def test_shift_invariance(generated_ds):
    cfg = McmcConfig(n_chains=2, n_iter=4000, n_burnin=1000, n_adapt=500, max_total_iter=4000)
    a = expected_ranks(run_sampler(generated_ds, mcmc=cfg))
    b = expected_ranks(run_sampler(generated_ds.shifted(3.0), mcmc=cfg))
    assert np.max(np.abs(a - b)) < 0.1


def test_heterogeneous_reduces_to_homogeneous(generated_ds):
    cfg = McmcConfig(n_chains=2, n_iter=6000, n_burnin=1000, n_adapt=0, max_total_iter=6000)
    sigma = 0.6
    hom = initial_state(generated_ds, ModelConfig(), PriorConfig())
    hom.sigma = sigma
    het = initial_state(generated_ds, ModelConfig(residuals="heterogeneous"), PriorConfig())
    het.alpha, het.beta, het.omega = 2 * math.log(sigma), 0.0, np.zeros(generated_ds.n_proposals)
    a = run_sampler(generated_ds, ModelConfig(), mcmc=cfg, init=hom, fixed=("sigma",))
    b = run_sampler(generated_ds, ModelConfig(residuals="heterogeneous"), mcmc=cfg, init=het,
                    fixed=("alpha_beta", "omega", "tau_omega"))
    ta, tb = a.theta_flat(), b.theta_flat()
    se = np.sqrt(ta.var(axis=0) / 1000 + tb.var(axis=0) / 1000)
    assert np.all(np.abs(ta.mean(axis=0) - tb.mean(axis=0)) < 5 * se)


def test_panel_model_runs():
    y = np.array([[3.0, 4.0, 5.0], [2.0, 2.0, 3.0], [5.0, 6.0, 6.0], [4.0, 3.0, 4.0]])
    ds = dataset_from_matrix(y, panels=["A", "A", "B", "B"])
    d = run_sampler(ds, ModelConfig(panel_effect=True),
                    mcmc=McmcConfig(n_chains=2, n_iter=600, n_burnin=200, n_adapt=0,
                                    max_total_iter=600))
    assert d.delta.shape[2] == 2 and "tau_delta" in d.monitored()


def test_nonconvergence_warns(generated_ds):
    from bayesrank.sampler import ConvergenceWarning
    cfg = McmcConfig(n_chains=2, n_iter=20, n_burnin=10, n_adapt=0, max_total_iter=40,
                     rhat_threshold=1.0001)
    with pytest.warns(ConvergenceWarning):
        d = run_sampler(generated_ds, mcmc=cfg)
    assert not d.converged and d.attempts == 2 and d.warnings
