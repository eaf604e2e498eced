"""Split-R-hat and the iterate-until-converged driver."""
from __future__ import annotations

import dataclasses
import logging
from typing import Callable, Mapping

import numpy as np

from .data import McmcConfig

log = logging.getLogger(__name__)

__all__ = ["gelman_rubin", "split_rhat", "max_rhat", "extend_until_converged"]


def split_rhat(chains) -> tuple[float, bool]:
    """Split potential scale reduction factor.

    Parameters
    ----------
    chains : array_like, shape (n_chains, n_draws)

    Returns
    -------
    rhat : float
    degenerate : bool
        True when the within-chain variance is zero. Identical constant
        chains give 1.0; constant chains at different values give inf.
    """
    a = np.asarray(chains, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected an array of shape (n_chains, n_draws)")
    n_chains, n_draws = a.shape
    if n_chains < 2 or n_draws < 4:
        raise ValueError("need at least 2 chains with at least 4 draws each")
    half = n_draws // 2
    # odd lengths drop the middle draw
    pieces = np.concatenate([a[:, :half], a[:, n_draws - half:]], axis=0)
    means = pieces.mean(axis=1)
    within = pieces.var(axis=1, ddof=1).mean()
    between = half * means.var(ddof=1)
    if not within > 0:
        return (1.0 if between == 0 else float("inf")), True
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within)), False


def gelman_rubin(chains) -> float:
    """Split-R-hat of one scalar quantity; see :func:`split_rhat`."""
    return split_rhat(chains)[0]


def max_rhat(rhats: Mapping[str, float]) -> float:
    return max(rhats.values()) if rhats else 1.0


def extend_until_converged(run: Callable[[McmcConfig, int], tuple[object, dict]],
                           mcmc: McmcConfig):
    """Rerun with longer chains until every monitored R-hat is at or below
    the threshold.

    ``run(config, attempt)`` returns ``(result, rhats)``. After a failing
    attempt, n_iter, n_burnin and n_adapt are multiplied by
    ``extension_factor``; once the next n_iter would exceed
    ``max_total_iter`` the last result is returned unconverged.

    Returns
    -------
    result, rhats, converged, config used, number of attempts
    """
    cfg = mcmc
    attempt = 0
    while True:
        result, rhats = run(cfg, attempt)
        attempt += 1
        worst = max_rhat(rhats)
        if worst <= mcmc.rhat_threshold:
            return result, rhats, True, cfg, attempt
        f = mcmc.extension_factor
        if cfg.n_iter * f > mcmc.max_total_iter:
            log.warning("no convergence after %d iterations per chain "
                        "(max R-hat %.3f > %.2f); iteration cap %d reached",
                        cfg.n_iter, worst, mcmc.rhat_threshold, mcmc.max_total_iter)
            return result, rhats, False, cfg, attempt
        log.info("max R-hat %.3f > %.2f, extending to %d iterations",
                 worst, mcmc.rhat_threshold, cfg.n_iter * f)
        cfg = dataclasses.replace(cfg, n_iter=cfg.n_iter * f,
                                  n_burnin=cfg.n_burnin * f,
                                  n_adapt=cfg.n_adapt * f)
