"""Rank-based summaries of posterior draws.

All functions take either a :class:`~bayesrank.sampler.PosteriorDraws` or a
plain ``(draws, proposals)`` integer array of ranks in which rank 1 is the
best proposal (largest theta).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import _sort_labels

__all__ = [
    "RankingSummary",
    "expected_ranks",
    "pcer",
    "rankogram",
    "cumulative_rankogram",
    "sucra",
    "rank_credible_interval",
    "posterior_mean_ranking",
    "summarize",
    "analytic_pairwise_prob",
    "analytic_rank_variance",
    "write_summary",
    "read_summary",
]


def _ranks(draws) -> np.ndarray:
    r = getattr(draws, "rank_draws", draws)
    r = np.asarray(r)
    if r.ndim == 1:
        r = r[None, :]
    return r


def expected_ranks(draws) -> np.ndarray:
    """Posterior mean rank of every proposal."""
    return _ranks(draws).mean(axis=0)


def pcer(er, n: int):
    """Percentile based on the expected rank, ``100 (ER - 0.5) / n``."""
    return 100.0 * (np.asarray(er, dtype=float) - 0.5) / n


def rankogram(draws) -> np.ndarray:
    """``P[i, m-1]`` = posterior probability that proposal i has rank m."""
    r = _ranks(draws)
    n_draws, n = r.shape
    counts = np.zeros((n, n))
    cols = np.broadcast_to(np.arange(n), r.shape)
    np.add.at(counts, (cols.ravel(), r.ravel() - 1), 1.0)
    return counts / n_draws


def cumulative_rankogram(prob: np.ndarray) -> np.ndarray:
    """Probability of being among the m best, m = 1..n."""
    return np.cumsum(prob, axis=1)


def sucra(prob: np.ndarray) -> np.ndarray:
    """Surface under the cumulative ranking curve, from a rankogram."""
    prob = np.asarray(prob, dtype=float)
    n = prob.shape[1]
    if n == 1:
        return np.ones(prob.shape[0])
    cum = cumulative_rankogram(prob)
    return cum[:, :-1].sum(axis=1) / (n - 1)


def rank_credible_interval(draws, level: float = 0.5) -> np.ndarray:
    """Equal-tailed credible interval of each proposal's rank.

    Integer endpoints: the lower bound is the smallest rank r with
    ``P(R <= r) > (1 - level)/2`` and the upper bound the largest r with
    ``P(R >= r) > (1 - level)/2``, so each excluded tail carries at most
    half of the remaining mass.

    Returns
    -------
    ndarray of shape (n, 2)
    """
    if not 0 < level < 1:
        raise ValueError("level must lie strictly between 0 and 1")
    prob = rankogram(draws)
    tail = (1.0 - level) / 2.0
    eps = 1e-12
    cum = np.cumsum(prob, axis=1)
    upper_tail = np.cumsum(prob[:, ::-1], axis=1)[:, ::-1]   # P(R >= r)
    lower = np.argmax(cum > tail + eps, axis=1) + 1
    n = prob.shape[1]
    upper = n - np.argmax((upper_tail > tail + eps)[:, ::-1], axis=1)
    return np.column_stack([lower, upper])


def posterior_mean_ranking(theta_mean: Sequence[float]) -> np.ndarray:
    """Proposal indices ordered by posterior mean of theta, best first.

    Accepts a vector of posterior means or a PosteriorDraws. Ties keep
    identifier (index) order.
    """
    if hasattr(theta_mean, "theta_flat"):
        theta_mean = theta_mean.theta_flat().mean(axis=0)
    return np.argsort(-np.asarray(theta_mean, dtype=float), kind="stable")


def analytic_pairwise_prob(theta_i, theta_k, var_i, var_k, cov_ik=0.0):
    """Normal approximation of P(theta_i <= theta_k) from posterior moments."""
    v = np.asarray(var_i) + np.asarray(var_k) - 2.0 * np.asarray(cov_ik)
    if np.any(v <= 0):
        raise ValueError("variance of the difference must be positive")
    return norm.cdf((np.asarray(theta_k) - np.asarray(theta_i)) / np.sqrt(v))


def analytic_rank_variance(pairwise: np.ndarray, pairwise_min: np.ndarray) -> np.ndarray:
    """Posterior variance of each rank from pairwise probabilities.

    Parameters
    ----------
    pairwise : (n, n) array
        ``pairwise[i, k] = P(theta_i <= theta_k)``; the diagonal is ignored.
    pairwise_min : (n, n, n) array
        ``pairwise_min[i, k, l] = P(theta_i <= min(theta_k, theta_l))``.
        Only entries with i, k, l distinct and k < l are read.
    """
    p = np.array(pairwise, dtype=float)
    n = p.shape[0]
    np.fill_diagonal(p, 1.0)
    out = np.zeros(n)
    for i in range(n):
        others = [k for k in range(n) if k != i]
        pi = p[i]
        out[i] = np.sum(pi[others] * (1.0 - pi[others]))
        for a, k in enumerate(others):
            for l in others[a + 1:]:
                out[i] += 2.0 * (pairwise_min[i, k, l] - pi[k] * pi[l])
    return out


@dataclass
class RankingSummary:
    proposal_ids: tuple
    er: np.ndarray
    pcer: np.ndarray
    sucra: np.ndarray
    cri: np.ndarray                  # (n, 2) integer ranks
    cri_level: float
    posterior_mean_theta: np.ndarray
    posterior_mean_rank: np.ndarray  # position in the posterior-mean ordering
    rankogram: np.ndarray | None = None
    average_score: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.proposal_ids)

    def order(self) -> np.ndarray:
        """Indices sorted by ER (best first), ties by identifier order."""
        return np.argsort(self.er, kind="stable")


def summarize(draws, level: float = 0.5, average_score=None) -> RankingSummary:
    """All rank summaries of a PosteriorDraws in one object."""
    prob = rankogram(draws)
    er = expected_ranks(draws)
    n = er.size
    theta_mean = draws.theta_flat().mean(axis=0)
    pm_order = posterior_mean_ranking(theta_mean)
    pm_rank = np.empty(n, dtype=int)
    pm_rank[pm_order] = np.arange(1, n + 1)
    return RankingSummary(
        proposal_ids=tuple(draws.proposal_ids), er=er, pcer=pcer(er, n),
        sucra=sucra(prob), cri=rank_credible_interval(draws, level),
        cri_level=level, posterior_mean_theta=theta_mean,
        posterior_mean_rank=pm_rank, rankogram=prob,
        average_score=None if average_score is None else np.asarray(average_score))


_SUMMARY_COLUMNS = ("proposal", "er", "pcer", "sucra", "cri_lower", "cri_upper",
                    "posterior_mean_theta", "average_score")


def write_summary(summary: RankingSummary, path: str | Path) -> None:
    """One row per proposal, best ER first."""
    avg = summary.average_score
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SUMMARY_COLUMNS + ("cri_level",))
        for i in summary.order():
            w.writerow((summary.proposal_ids[i], repr(float(summary.er[i])),
                        repr(float(summary.pcer[i])), repr(float(summary.sucra[i])),
                        int(summary.cri[i, 0]), int(summary.cri[i, 1]),
                        repr(float(summary.posterior_mean_theta[i])),
                        "" if avg is None else repr(float(avg[i])),
                        summary.cri_level))


def read_summary(path: str | Path) -> RankingSummary:
    """Load a summary CSV written by :func:`write_summary`."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty summary")
    # back to identifier order so index order is the tie-break order again
    order = {p: i for i, p in enumerate(_sort_labels(r["proposal"] for r in rows))}
    rows.sort(key=lambda r: order[r["proposal"]])
    missing = set(_SUMMARY_COLUMNS[:6]) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    ids = tuple(r["proposal"] for r in rows)
    f = lambda k: np.array([float(r[k]) for r in rows])
    er = f("er")
    theta = (f("posterior_mean_theta") if rows[0].get("posterior_mean_theta")
             else np.full(len(rows), np.nan))
    pm_order = posterior_mean_ranking(theta)
    pm_rank = np.empty(len(rows), dtype=int)
    pm_rank[pm_order] = np.arange(1, len(rows) + 1)
    avg = f("average_score") if rows[0].get("average_score") else None
    level = float(rows[0]["cri_level"]) if rows[0].get("cri_level") else 0.5
    return RankingSummary(
        proposal_ids=ids, er=er, pcer=f("pcer"), sucra=f("sucra"),
        cri=np.column_stack([f("cri_lower"), f("cri_upper")]).astype(int),
        cri_level=level, posterior_mean_theta=theta, posterior_mean_rank=pm_rank,
        average_score=avg)
