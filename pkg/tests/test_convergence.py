import warnings

import numpy as np
import pytest

from bayesrank.convergence import extend_until_converged, gelman_rubin, split_rhat
from bayesrank.data import McmcConfig


def _split_rhat_oracle(chains):
    # textbook formula written out independently
    a = np.asarray(chains, float)
    n = a.shape[1] // 2
    halves = [c[:n] for c in a] + [c[-n:] for c in a]
    m = len(halves)
    means = [np.mean(h) for h in halves]
    gm = np.mean(means)
    B = n / (m - 1) * sum((x - gm) ** 2 for x in means)
    W = np.mean([np.var(h, ddof=1) for h in halves])
    return np.sqrt(((n - 1) / n * W + B / n) / W)


def test_same_target_close_to_one():
    rng = np.random.default_rng(1)
    r = gelman_rubin(rng.normal(size=(4, 10_000)))
    assert 1.0 <= r <= 1.01 or abs(r - 1) < 1e-3


def test_offset_chains_large():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 1000))
    a[1] += 10
    r = gelman_rubin(a)
    assert r > 3
    assert r == pytest.approx(_split_rhat_oracle(a), rel=1e-12)


def test_matches_oracle_odd_length():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 101)) + np.array([[0.0], [0.3], [-0.2]])
    assert split_rhat(a)[0] == pytest.approx(_split_rhat_oracle(a), rel=1e-12)


def test_constant_chains():
    assert split_rhat(np.full((3, 50), 2.5)) == (1.0, True)
    r, deg = split_rhat(np.array([[1.0] * 10, [2.0] * 10]))
    assert deg and np.isinf(r)


def test_needs_two_chains():
    with pytest.raises(ValueError):
        split_rhat(np.zeros((1, 100)))


def test_extension_loop_stops_at_cap():
    calls = []

    def run(cfg, attempt):
        calls.append(cfg.n_iter)
        return cfg, {"x": 2.0}

    cfg = McmcConfig(n_iter=1000, n_burnin=500, n_adapt=500, max_total_iter=8000)
    _, _, ok, used, attempts = extend_until_converged(run, cfg)
    assert not ok and calls == [1000, 2000, 4000, 8000] and attempts == 4
    assert used.n_burnin == 4000 and used.n_adapt == 4000


def test_extension_loop_stops_when_converged():
    def run(cfg, attempt):
        return None, {"x": 1.05 if attempt >= 1 else 1.5}

    _, _, ok, used, attempts = extend_until_converged(run, McmcConfig(n_iter=100, n_burnin=50))
    assert ok and attempts == 2 and used.n_iter == 200
