import numpy as np
import pytest

from bayesrank.convergence import split_rhat
from bayesrank.data import McmcConfig, ValidationError, dataset_from_matrix
from bayesrank.diagnostics import (assessor_effects, bland_altman, diagnostics_report, icc,
                                   read_draw_dump, trace_export, write_draw_dump)
from bayesrank.sampler import run_sampler
from bayesrank.simulation import SimScenario, simulate_replicate

# six targets rated by four judges, the textbook example for the single-rater forms
TEXTBOOK = np.array([[9, 2, 5, 8], [6, 1, 3, 2], [8, 4, 6, 8],
                     [7, 1, 2, 6], [10, 5, 6, 9], [6, 2, 4, 7]], float)


@pytest.mark.parametrize("variant,value,lo,hi", [
    ("one-way", 0.166, -0.13, 0.72),
    ("two-way-agreement", 0.290, 0.02, 0.76),
    ("two-way-consistency", 0.715, 0.34, 0.95),
])
def test_icc_textbook(variant, value, lo, hi):
    r = icc(dataset_from_matrix(TEXTBOOK, n_levels=10), variant)
    assert r.icc == pytest.approx(value, abs=5e-4)
    assert r.ci_lower == pytest.approx(lo, abs=5e-3)
    assert r.ci_upper == pytest.approx(hi, abs=5e-3)


def test_icc_perfect_agreement():
    y = np.repeat(np.array([[1.0], [3.0], [4.0], [6.0]]), 3, axis=1)
    for v in ("one-way", "two-way-consistency", "two-way-agreement"):
        assert icc(dataset_from_matrix(y), v).icc == 1.0


def test_icc_pure_noise():
    rng = np.random.default_rng(0)
    y = rng.integers(1, 7, size=(400, 6)).astype(float)
    assert abs(icc(dataset_from_matrix(y)).icc) < 0.1


def test_icc_degenerate():
    y = np.array([[1.0, 2.0], [2.0, 1.0], [1.0, 2.0]])
    r = icc(dataset_from_matrix(y))
    assert r.degenerate and r.icc == 0.0


def test_icc_invariant_to_shift_and_scale():
    y = TEXTBOOK
    base = icc(dataset_from_matrix(y, n_levels=10)).icc
    assert icc(dataset_from_matrix(y + 3, n_levels=20)).icc == pytest.approx(base)
    assert icc(dataset_from_matrix(2 * y, n_levels=20)).icc == pytest.approx(base)


def test_icc_needs_raters():
    with pytest.raises(ValidationError):
        icc(dataset_from_matrix(np.array([[1.0], [2.0]])))


def test_icc_missing_cells_flagged(generated_ds):
    r = icc(generated_ds)
    assert r.ci_lower <= r.icc <= r.ci_upper
    assert r.missing_fraction == pytest.approx(1 - generated_ds.n_obs / 500)


def test_icc_follows_signal_and_noise():
    higher_signal, lower_noise = 0, 0
    for s in range(20):
        base = icc(dataset_from_matrix(simulate_replicate(SimScenario(), s).y)).icc
        strong = icc(dataset_from_matrix(
            simulate_replicate(SimScenario(tau_theta_true=2.0), s).y)).icc
        quiet = icc(dataset_from_matrix(
            simulate_replicate(SimScenario(sigma_scale=0.5), s).y)).icc
        higher_signal += strong > base
        lower_noise += quiet > base
    assert higher_signal >= 17 and lower_noise >= 17


def test_bland_altman():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    assert bland_altman(a, a)[:3] == (0.0, 0.0, 0.0)
    m, lo, hi, d = bland_altman(a, a + 2)
    assert (m, lo, hi) == (-2.0, -2.0, -2.0)
    with pytest.raises(ValueError):
        bland_altman(a, a[:2])


@pytest.fixture(scope="module")
def small_draws():
    y = simulate_replicate(SimScenario(n_proposals=10, n_assessors=4), 5).y
    return run_sampler(dataset_from_matrix(y), mcmc=McmcConfig(
        n_chains=3, n_iter=600, n_burnin=200, n_adapt=100, max_total_iter=600, master_seed=2))


def test_trace_export_shape_and_rhat(small_draws):
    t = trace_export(small_draws, "tau_theta")
    assert t.shape == (3 * 400,)
    arr = t["value"].reshape(3, 400)
    assert split_rhat(arr)[0] == pytest.approx(small_draws.rhat["tau_theta"], abs=1e-12)
    assert t["iteration"][0] == 301
    with pytest.raises(KeyError, match="available"):
        trace_export(small_draws, "nope")


def test_draw_dump_roundtrip(small_draws, tmp_path):
    write_draw_dump(small_draws, tmp_path / "d.csv")
    back = read_draw_dump(tmp_path / "d.csv")
    assert np.array_equal(back["theta[3]"], small_draws.parameter("theta[3]"))
    assert np.array_equal(back["tau_theta"], trace_export(small_draws, "tau_theta")["value"]
                          .reshape(3, -1))


def test_assessor_effects_sign():
    # assessor 1 is strict, assessor 3 generous
    rng = np.random.default_rng(3)
    theta = rng.normal(size=30)
    offs = np.array([-1.0, 0.0, 1.0])
    y = np.clip(np.rint(3.5 + theta[:, None] + offs + 0.3 * rng.normal(size=(30, 3))), 1, 6)
    d = run_sampler(dataset_from_matrix(y), mcmc=McmcConfig(
        n_chains=2, n_iter=1500, n_burnin=500, n_adapt=200, max_total_iter=1500))
    nu = [r["mean"] for r in assessor_effects(d)]
    assert nu[0] < nu[1] < nu[2]


def test_report_sections(small_draws):
    from bayesrank.diagnostics import rhat_table
    txt = diagnostics_report(rhats=rhat_table(small_draws.monitored()),
                             assessors=assessor_effects(small_draws), tie_count=0,
                             warnings=["w"])
    assert "split R-hat" in txt and "assessor effects" in txt and "w" in txt
