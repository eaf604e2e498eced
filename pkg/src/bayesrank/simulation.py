"""Simulation study: synthetic panels with known quality, ranking recovery by MSE.

The generator draws assessor biases and noise levels, latent proposal
qualities and discretized six-level grades, then blanks a random number of
cells without ever emptying a row or column.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data import McmcConfig, ModelConfig, PriorConfig, dataset_from_matrix
from .ranking import expected_ranks
from .sampler import ConvergenceWarning, ranks_from_theta, run_sampler

log = logging.getLogger(__name__)

__all__ = [
    "SimScenario",
    "SimReplicate",
    "simulate_replicate",
    "true_ranks",
    "mse",
    "monte_carlo_se",
    "average_ranks",
    "METHODS",
    "MethodResult",
    "compare_methods",
    "write_study",
    "write_replicate_detail",
]

# method name -> (outcome, residuals); None marks the score-average ranking
METHODS = {
    "average": None,
    "normal_homogeneous": ("continuous", "homogeneous"),
    "ordinal_homogeneous": ("ordinal", "homogeneous"),
    "normal_heterogeneous": ("continuous", "heterogeneous"),
    "ordinal_heterogeneous": ("ordinal", "heterogeneous"),
}


@dataclass(frozen=True)
class SimScenario:
    """Generator settings.

    ``noise_as_variance=True`` reproduces the reference generator, which
    hands sigma_j**2 to the normal sampler as its standard deviation. Set it
    to False to use sigma_j as the standard deviation instead.
    """

    n_proposals: int = 50
    n_assessors: int = 10
    alpha_range: tuple[float, float] = (-0.5, 0.5)
    sigma_range: tuple[float, float] = (0.0, 0.5)
    sigma_last: float = 0.9
    tau_theta_true: float = 1.0
    cutoffs: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    missing_max: int = 100
    n_replicates: int = 500
    noise_as_variance: bool = True
    sigma_scale: float = 1.0

    def __post_init__(self):
        if self.n_proposals < 1 or self.n_assessors < 1 or self.n_replicates < 1:
            raise ValueError("n_proposals, n_assessors and n_replicates must be positive")
        c = np.asarray(self.cutoffs, dtype=float)
        if c.size < 1 or np.any(np.diff(c) <= 0):
            raise ValueError("cutoffs must be strictly increasing")
        if self.missing_max < 0:
            raise ValueError("missing_max must be >= 0")
        if self.sigma_scale < 0 or self.tau_theta_true < 0:
            raise ValueError("scales must be non-negative")

    @property
    def n_levels(self) -> int:
        return len(self.cutoffs) + 1


@dataclass
class SimReplicate:
    x: np.ndarray           # latent scores, NaN where blanked
    y: np.ndarray           # grades 1..K, NaN where blanked
    theta_true: np.ndarray
    rank_true: np.ndarray   # 1 = best
    alpha: np.ndarray
    sigma: np.ndarray
    n_missing: int

    def dataset(self, n_levels: int = 6):
        return dataset_from_matrix(self.y, n_levels=n_levels)


def _discretize(x: np.ndarray, cutoffs: Sequence[float]) -> np.ndarray:
    # grade k when c_{k-1} < x <= c_k
    return 1.0 + np.searchsorted(np.asarray(cutoffs, dtype=float), x, side="left")


def _covering_mask(n: int, m: int, n_missing: int, rng) -> np.ndarray:
    # keep a random set of max(n, m) cells touching every row and column,
    # blank n_missing of the others
    pi, pj = rng.permutation(n), rng.permutation(m)
    keep = np.zeros((n, m), dtype=bool)
    for t in range(max(n, m)):
        keep[pi[t % n], pj[t % m]] = True
    free = np.flatnonzero(~keep.ravel())
    mask = np.zeros(n * m, dtype=bool)
    mask[rng.choice(free, size=n_missing, replace=False)] = True
    return mask.reshape(n, m)


def simulate_replicate(scenario: SimScenario, seed) -> SimReplicate:
    """Generate one synthetic panel.

    Parameters
    ----------
    seed : int, SeedSequence or Generator
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = scenario
    n, m = s.n_proposals, s.n_assessors
    alpha = rng.uniform(*s.alpha_range, size=m)
    sigma = np.append(rng.uniform(*s.sigma_range, size=m - 1), s.sigma_last) * s.sigma_scale
    theta = rng.normal(0.0, s.tau_theta_true, size=n)
    spread = sigma ** 2 if s.noise_as_variance else sigma
    x = rng.normal(alpha[None, :] + theta[:, None], spread[None, :])
    y = _discretize(x, s.cutoffs)

    # at least max(n, m) cells must stay observed to cover every row and column
    n_missing = int(rng.integers(0, min(s.missing_max, n * m - max(n, m)) + 1))
    for _ in range(100):
        mask = np.zeros(n * m, dtype=bool)
        mask[rng.choice(n * m, size=n_missing, replace=False)] = True
        mask = mask.reshape(n, m)
        if not (mask.all(axis=1).any() or mask.all(axis=0).any()):
            break
    else:
        mask = _covering_mask(n, m, n_missing, rng)
    x, y = x.copy(), y.copy()
    x[mask] = np.nan
    y[mask] = np.nan
    return SimReplicate(x=x, y=y, theta_true=theta, rank_true=true_ranks(theta),
                        alpha=alpha, sigma=sigma, n_missing=n_missing)


def true_ranks(theta) -> np.ndarray:
    """Rank 1 for the largest theta; exact ties go to the lower index."""
    return ranks_from_theta(np.asarray(theta, dtype=float))[0]


def average_ranks(y) -> np.ndarray:
    """Rank proposals by mean observed grade; equal means share the mid-rank."""
    means = np.nanmean(np.asarray(y, dtype=float), axis=1)
    return rankdata(-means, method="average")


def mse(rank_true, rank_est) -> float:
    """Mean squared difference between two rank vectors."""
    a = np.asarray(rank_true, dtype=float)
    b = np.asarray(rank_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError("rank vectors differ in length")
    return float(np.mean((a - b) ** 2))


def monte_carlo_se(replicate_mse) -> float:
    """Monte Carlo standard error of the mean of per-replicate MSEs.

    ``sqrt(sum_r (MSE_r - MSE)^2 / (N (N - 1)))``. Zero for a single
    replicate.
    """
    v = np.asarray(replicate_mse, dtype=float)
    n = v.size
    if n < 2:
        return 0.0
    return float(np.sqrt(np.sum((v - v.mean()) ** 2) / (n * (n - 1))))


@dataclass
class MethodResult:
    method: str
    mse: float
    mc_se: float
    n_replicates: int
    n_nonconverged: int
    replicate_mse: np.ndarray = field(repr=False)
    nonconverged: np.ndarray = field(repr=False)


def _replicate_seeds(seed: int, n: int):
    root = np.random.SeedSequence(int(seed))
    return root.spawn(n)


def _one_replicate(args):
    scenario, seq, methods, prior, mcmc = args
    # two children: one for the generator, one seeding the MCMC chains
    gen_seq, fit_seq = seq.spawn(2)
    rep = simulate_replicate(scenario, gen_seq)
    out = {}
    ds = None
    for name in methods:
        spec = METHODS[name]
        if spec is None:
            out[name] = (mse(rep.rank_true, average_ranks(rep.y)), True)
            continue
        if ds is None:
            ds = dataset_from_matrix(rep.y, n_levels=scenario.n_levels)
        model = ModelConfig(outcome=spec[0], residuals=spec[1], n_levels=scenario.n_levels)
        cfg = dataclasses.replace(mcmc, master_seed=int(fit_seq.generate_state(1)[0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            draws = run_sampler(ds, model, prior, cfg)
        # proposals are labelled 1..n in row order, so indices line up; the
        # real-valued ER is the estimate (it is the posterior-mean rank)
        est = expected_ranks(draws)
        out[name] = (mse(rep.rank_true, est), bool(draws.converged))
    return out


def compare_methods(scenario: SimScenario | None = None, mcmc: McmcConfig | None = None,
                    seed: int = 0, methods: Sequence[str] | None = None,
                    prior: PriorConfig | None = None, n_jobs: int = 1,
                    extend: bool = False) -> dict[str, MethodResult]:
    """Run the study and aggregate MSE per method.

    Replicate r uses the r-th child of ``SeedSequence(seed)``, so results do
    not depend on ``n_jobs`` or on which methods are requested. With
    ``extend=False`` each fit runs once with the given chain budget and
    replicates whose R-hat stays above the threshold are counted as
    non-converged rather than rerun.
    """
    scenario = scenario or SimScenario()
    mcmc = mcmc or McmcConfig()
    prior = prior or PriorConfig()
    methods = list(METHODS) if methods is None else list(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {list(METHODS)}")
    if not extend:
        mcmc = dataclasses.replace(mcmc, max_total_iter=mcmc.n_iter)
    seeds = _replicate_seeds(seed, scenario.n_replicates)
    jobs = [(scenario, s, methods, prior, mcmc) for s in seeds]
    if n_jobs == 1:
        results = [_one_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_one_replicate, jobs))

    table = {}
    for name in methods:
        vals = np.array([r[name][0] for r in results])
        conv = np.array([r[name][1] for r in results])
        table[name] = MethodResult(name, float(vals.mean()), monte_carlo_se(vals),
                                   len(vals), int((~conv).sum()), vals, ~conv)
        if (~conv).any():
            log.warning("%s: %d of %d replicates did not reach R-hat <= %.2f",
                        name, (~conv).sum(), len(vals), mcmc.rhat_threshold)
    return table


def write_study(table: dict[str, MethodResult], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "mse", "mc_se", "n_replicates", "n_nonconverged"))
        for r in table.values():
            w.writerow((r.method, repr(r.mse), repr(r.mc_se), r.n_replicates,
                        r.n_nonconverged))


def write_replicate_detail(table: dict[str, MethodResult], path: str | Path) -> None:
    """Per-replicate MSE, one row per (replicate, method)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("replicate", "method", "mse", "converged"))
        for r in table.values():
            for i, (v, bad) in enumerate(zip(r.replicate_mse, r.nonconverged)):
                w.writerow((i, r.method, repr(float(v)), int(not bad)))
