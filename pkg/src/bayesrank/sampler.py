"""Metropolis-within-Gibbs estimation of the hierarchical score models.

The model for an observed score of proposal i by assessor j (in panel k) is

    y_ij ~ N(ybar + theta_i + lambda_ij + delta_k, sigma^2)
    theta_i ~ N(0, tau_theta^2),  lambda_ij ~ N(nu_j, tau_lambda^2)
    nu_j ~ N(0, 0.5^2),           delta_k ~ N(0, tau_delta^2)

with ybar the fixed empirical grand mean. The ordinal variant puts the same
structure on a latent x_ij that is cut into the observed grade by ordered
cutoffs, and the heterogeneous variant replaces sigma^2 by
``exp(alpha + beta * log(mean score of i) + omega_i)``.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .convergence import extend_until_converged, split_rhat
from .data import McmcConfig, ModelConfig, PriorConfig, ScoreDataset

log = logging.getLogger(__name__)

__all__ = [
    "ParameterState",
    "PosteriorDraws",
    "ConvergenceWarning",
    "SamplerError",
    "log_likelihood",
    "initial_state",
    "gibbs_step",
    "run_sampler",
    "ranks_from_theta",
]


class ConvergenceWarning(UserWarning):
    pass


class SamplerError(RuntimeError):
    pass


@dataclass
class ParameterState:
    """One full state of the Markov chain.

    ``sigma`` is the residual SD of the homogeneous models. In the
    heterogeneous models the per-proposal SDs follow from ``alpha``,
    ``beta`` and ``omega`` (see :meth:`residual_sd`). ``cutoffs`` and
    ``latent_x`` are empty for the continuous outcome.
    """

    theta: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    sigma: float
    tau_theta: float
    tau_lambda: float
    tau_delta: float
    cutoffs: np.ndarray = field(default_factory=lambda: np.empty(0))
    latent_x: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha: float = 0.0
    beta: float = 0.0
    omega: np.ndarray = field(default_factory=lambda: np.empty(0))
    tau_omega: float = 1.0

    def copy(self) -> "ParameterState":
        return dataclasses.replace(
            self, **{f.name: np.array(getattr(self, f.name), copy=True)
                     for f in dataclasses.fields(self)
                     if isinstance(getattr(self, f.name), np.ndarray)})

    def residual_sd(self, ds: ScoreDataset, cfg: ModelConfig) -> np.ndarray:
        """Residual SD per observation."""
        if cfg.heterogeneous:
            lyb = np.log(ds.proposal_means())
            var = np.exp(self.alpha + self.beta * lyb + self.omega)
            return np.sqrt(var)[ds.proposal_index]
        return np.full(ds.n_obs, float(self.sigma))

    def _scalars(self) -> np.ndarray:
        s = np.zeros(K.N_SCALARS)
        s[K.TAU_THETA] = self.tau_theta
        s[K.TAU_LAMBDA] = self.tau_lambda
        s[K.TAU_DELTA] = self.tau_delta
        s[K.SIGMA] = self.sigma
        s[K.ALPHA] = self.alpha
        s[K.BETA] = self.beta
        s[K.TAU_OMEGA] = self.tau_omega
        return s

    def _set_scalars(self, s: np.ndarray) -> None:
        self.tau_theta = float(s[K.TAU_THETA])
        self.tau_lambda = float(s[K.TAU_LAMBDA])
        self.tau_delta = float(s[K.TAU_DELTA])
        self.sigma = float(s[K.SIGMA])
        self.alpha = float(s[K.ALPHA])
        self.beta = float(s[K.BETA])
        self.tau_omega = float(s[K.TAU_OMEGA])


SCALAR_NAMES = ("tau_theta", "tau_lambda", "tau_delta", "sigma", "alpha",
                "beta", "tau_omega")


def _check_dims(state: ParameterState, ds: ScoreDataset, cfg: ModelConfig) -> None:
    n_panel = max(ds.n_panels, 1) if cfg.panel_effect else 1
    want = {"theta": ds.n_proposals, "lam": ds.n_obs, "nu": ds.n_assessors,
            "delta": n_panel}
    if cfg.heterogeneous:
        want["omega"] = ds.n_proposals
    if cfg.ordinal:
        want["cutoffs"] = cfg.n_levels - 1
        want["latent_x"] = ds.n_obs
    for name, size in want.items():
        got = np.shape(getattr(state, name))
        if got != (size,):
            raise ValueError(f"state.{name} has shape {got}, expected ({size},)")


def log_likelihood(state: ParameterState, ds: ScoreDataset, cfg: ModelConfig) -> float:
    """Gaussian log-density of the scores (or ordinal latents) given the state."""
    _check_dims(state, ds, cfg)
    z = state.latent_x if cfg.ordinal else ds.scores
    mu = ds.grand_mean + state.theta[ds.proposal_index] + state.lam
    if cfg.panel_effect:
        mu = mu + state.delta[ds.panel_index]
    sd = state.residual_sd(ds, cfg)
    r = (z - mu) / sd
    return float(np.sum(-0.5 * r * r - np.log(sd) - 0.5 * np.log(2 * np.pi)))


# ---------------------------------------------------------------------------
# compiled-kernel plumbing

@dataclass(frozen=True)
class _Arrays:
    ybar: float
    y: np.ndarray
    level: np.ndarray
    prop: np.ndarray
    assr: np.ndarray
    panel: np.ndarray
    lybar: np.ndarray
    prop_ptr: np.ndarray
    prop_obs: np.ndarray
    level_ptr: np.ndarray
    level_obs: np.ndarray
    n_obs_assr: np.ndarray
    prior: np.ndarray
    tuning: np.ndarray
    flags: tuple


def _csr(index: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(index, kind="stable").astype(np.int64)
    ptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=size), out=ptr[1:])
    return ptr, order


def _arrays(ds: ScoreDataset, cfg: ModelConfig, prior: PriorConfig) -> _Arrays:
    cfg.check_dataset(ds)
    n_levels = cfg.n_levels
    level = np.rint(ds.scores).astype(np.int64) if cfg.ordinal else np.ones(ds.n_obs, np.int64)
    prop_ptr, prop_obs = _csr(ds.proposal_index, ds.n_proposals)
    lv_size = n_levels if cfg.ordinal else 1
    level_ptr, level_obs = _csr(level - 1, lv_size)
    panel = (np.asarray(ds.panel_index, dtype=np.int64) if cfg.panel_effect
             else np.zeros(ds.n_obs, dtype=np.int64))
    pmeans = ds.proposal_means()
    lybar = np.log(pmeans)
    counts = np.bincount(ds.proposal_index, minlength=ds.n_proposals)

    pr = np.zeros(7)
    pr[K.P_SD_LO] = prior.sd_uniform_lower
    pr[K.P_SD_HI] = prior.sd_uniform_upper
    pr[K.P_NU_SD] = prior.nu_prior_sd
    pr[K.P_AB_SD] = prior.scale_alpha_beta_sd
    pr[K.P_TAU_OMEGA_HI] = prior.tau_omega_upper
    # flat cutoff prior on a wide but bounded stretch of the score scale,
    # which keeps unobserved grade levels from drifting off to infinity
    pr[K.P_CUT_LO] = -float(n_levels)
    pr[K.P_CUT_HI] = 2.0 * n_levels

    tu = np.zeros(6)
    tu[K.T_STEP_A] = 2.0 / np.sqrt(ds.n_obs)
    tu[K.T_STEP_B] = tu[K.T_STEP_A] / max(float(np.std(lybar)), 0.05)
    tu[K.T_STEP_OMEGA] = min(1.0, 2.4 / np.sqrt(max(counts.mean() / 2.0, 1.0)))
    tu[K.T_CUT_RW] = 0.25
    tu[K.T_CUT_TRIES] = 3
    tu[K.T_POLAR_TRIES] = 20
    return _Arrays(
        ybar=ds.grand_mean, y=np.ascontiguousarray(ds.scores, dtype=np.float64),
        level=level, prop=np.ascontiguousarray(ds.proposal_index, dtype=np.int64),
        assr=np.ascontiguousarray(ds.assessor_index, dtype=np.int64), panel=panel,
        lybar=lybar, prop_ptr=prop_ptr, prop_obs=prop_obs, level_ptr=level_ptr,
        level_obs=level_obs,
        n_obs_assr=np.bincount(ds.assessor_index, minlength=ds.n_assessors).astype(np.int64),
        prior=pr, tuning=tu,
        flags=(cfg.ordinal, cfg.heterogeneous, cfg.panel_effect))


def _fixed_mask(fixed, cfg: ModelConfig) -> np.ndarray:
    mask = np.zeros(K.N_BLOCKS, dtype=np.bool_)
    for name in fixed or ():
        if name not in K.BLOCK_NAMES:
            raise ValueError(f"unknown block {name!r}; choose from {K.BLOCK_NAMES}")
        mask[K.BLOCK_NAMES.index(name)] = True
    if not cfg.panel_effect:
        mask[[K.B_DELTA, K.B_TAU_DELTA]] = True
    if not cfg.ordinal:
        mask[[K.B_CUTOFFS, K.B_LATENT]] = True
    if cfg.heterogeneous:
        mask[K.B_SIGMA] = True
    else:
        mask[[K.B_ALPHA_BETA, K.B_OMEGA, K.B_TAU_OMEGA]] = True
    return mask


def _state_buffers(state: ParameterState, ds: ScoreDataset, cfg: ModelConfig):
    n_cut = cfg.n_levels - 1 if cfg.ordinal else 0
    omega = state.omega if cfg.heterogeneous else np.zeros(ds.n_proposals)
    cut = state.cutoffs if cfg.ordinal else np.zeros(n_cut)
    x = state.latent_x if cfg.ordinal else np.zeros(ds.n_obs)
    return [np.array(a, dtype=np.float64, copy=True) for a in
            (state.theta, state.lam, state.nu, state.delta, omega, cut, x)] + [state._scalars()]


def _raise_status(status: int, it: int) -> None:
    name = K.BLOCK_NAMES[status - 1]
    raise SamplerError(f"non-finite value while updating {name!r} at sweep {it}")


def gibbs_step(state: ParameterState, ds: ScoreDataset, cfg: ModelConfig,
               prior: PriorConfig, rng: np.random.Generator,
               fixed=(), collapse: bool | None = None) -> ParameterState:
    """One full sweep; returns a new state and leaves ``state`` untouched.

    ``fixed`` names blocks that are held constant (see ``BLOCK_NAMES`` in the
    kernel). By default lambda is integrated out of the other updates unless
    it is itself fixed.
    """
    _check_dims(state, ds, cfg)
    arr = _arrays(ds, cfg, prior)
    mask = _fixed_mask(fixed, cfg)
    if collapse is None:
        collapse = not mask[K.B_LAMBDA]
    theta, lam, nu, delta, omega, cut, x, scal = _state_buffers(state, ds, cfg)
    status, it = K.run_chain(
        rng, 1, 1, 1, arr.ybar, arr.y, arr.level, arr.prop, arr.assr, arr.panel,
        arr.lybar, arr.prop_ptr, arr.prop_obs, arr.level_ptr, arr.level_obs,
        arr.n_obs_assr, theta, lam, nu, delta, omega, cut, x, scal,
        arr.prior, arr.tuning, mask, *arr.flags, collapse,
        np.empty((0, theta.size)), np.empty((0, nu.size)), np.empty((0, delta.size)),
        np.empty((0, cut.size)), np.empty((0, K.N_SCALARS)), np.zeros(lam.size))
    if status:
        _raise_status(status, it)
    new = dataclasses.replace(state, theta=theta, lam=lam, nu=nu, delta=delta)
    if cfg.heterogeneous:
        new.omega = omega
    if cfg.ordinal:
        new.cutoffs, new.latent_x = cut, x
    new._set_scalars(scal)
    return new


def initial_state(ds: ScoreDataset, cfg: ModelConfig, prior: PriorConfig,
                  rng: np.random.Generator | None = None,
                  jitter: float = 0.1) -> ParameterState:
    """Data-based starting values, perturbed by ``jitter`` relative Gaussian noise."""
    def jit(v):
        v = np.asarray(v, dtype=float)
        if rng is None or jitter == 0:
            return v
        return v * (1.0 + jitter * rng.standard_normal(v.shape))

    ybar = ds.grand_mean
    pmeans = ds.proposal_means()
    amean = (np.bincount(ds.assessor_index, ds.scores, ds.n_assessors)
             / np.bincount(ds.assessor_index, minlength=ds.n_assessors))
    lo, hi = prior.sd_uniform_lower, prior.sd_uniform_upper
    sd0 = 0.5 * hi

    def sd(v):
        return float(np.clip(jit(v), lo * 10, hi))

    n_panel = max(ds.n_panels, 1) if cfg.panel_effect else 1
    state = ParameterState(
        theta=jit(pmeans - ybar), lam=np.zeros(ds.n_obs), nu=jit(amean - ybar),
        delta=np.zeros(n_panel), sigma=sd(sd0), tau_theta=sd(sd0),
        tau_lambda=sd(sd0), tau_delta=sd(sd0))
    if cfg.heterogeneous:
        resid = ds.scores - pmeans[ds.proposal_index]
        var = max(float(np.var(resid)), 1e-2)
        state.alpha = float(jit(np.log(var)))
        state.beta = 0.0
        state.omega = np.zeros(ds.n_proposals)
        state.tau_omega = float(np.clip(jit(1.0), 1e-3, prior.tau_omega_upper))
    if cfg.ordinal:
        k = np.arange(1, cfg.n_levels, dtype=float)
        cut = k + 0.5 + (0.0 if rng is None else 0.5 * jitter * rng.standard_normal(k.size))
        cut = np.sort(cut)
        state.cutoffs = cut
        lv = np.rint(ds.scores).astype(int)
        lower = np.concatenate([[cut[0] - 1.0], cut])[lv - 1]
        upper = np.concatenate([cut, [cut[-1] + 1.0]])[lv - 1]
        state.latent_x = 0.5 * (lower + upper)
    return state


def ranks_from_theta(theta: np.ndarray) -> np.ndarray:
    """Rank 1 = largest value, ties broken by column index; works row-wise."""
    theta = np.atleast_2d(theta)
    order = np.argsort(-theta, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(theta.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, theta.shape[1] + 1)
    return ranks


@dataclass
class PosteriorDraws:
    """Retained draws of all chains.

    Arrays are indexed ``[chain, draw, ...]``. ``scalars`` maps the names in
    ``SCALAR_NAMES`` to ``(n_chains, n_draws)`` arrays.
    """

    theta: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    cutoffs: np.ndarray
    scalars: dict
    lambda_mean: np.ndarray
    proposal_ids: tuple
    assessor_ids: tuple
    panel_ids: tuple | None
    model: ModelConfig
    mcmc: McmcConfig
    seeds: tuple = ()
    converged: bool = True
    rhat: dict = field(default_factory=dict)
    rhat_degenerate: tuple = ()
    attempts: int = 1
    warnings: list = field(default_factory=list)
    _ranks: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.theta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.theta.shape[1]

    @property
    def n_proposals(self) -> int:
        return self.theta.shape[2]

    def theta_flat(self) -> np.ndarray:
        return self.theta.reshape(-1, self.n_proposals)

    @property
    def rank_draws(self) -> np.ndarray:
        """(retained draws across chains) x proposals; rank 1 = best."""
        if self._ranks is None:
            self._ranks = ranks_from_theta(self.theta_flat())
        return self._ranks

    @property
    def tie_count(self) -> int:
        """Draws in which two proposals had exactly equal theta."""
        s = np.sort(self.theta_flat(), axis=1)
        return int(np.any(np.diff(s, axis=1) == 0, axis=1).sum())

    def monitored(self) -> dict:
        """Name -> (n_chains, n_draws) array for every R-hat-monitored quantity."""
        out = {}
        for i, pid in enumerate(self.proposal_ids):
            out[f"theta[{pid}]"] = self.theta[:, :, i]
        for j, aid in enumerate(self.assessor_ids):
            out[f"nu[{aid}]"] = self.nu[:, :, j]
        names = ["tau_theta", "tau_lambda"]
        if not self.model.heterogeneous:
            names.append("sigma")
        if self.model.panel_effect:
            names.append("tau_delta")
        for name in names:
            out[name] = self.scalars[name]
        return out

    def parameter(self, name: str) -> np.ndarray:
        """(n_chains, n_draws) draws of a scalar, ``theta[id]``, ``nu[id]``,
        ``delta[id]`` or ``cutoff[k]``."""
        if name in self.scalars:
            return self.scalars[name]
        if name.endswith("]") and "[" in name:
            base, key = name[:-1].split("[", 1)
            table = {"theta": (self.theta, self.proposal_ids),
                     "nu": (self.nu, self.assessor_ids),
                     "delta": (self.delta, self.panel_ids or ("0",)),
                     "cutoff": (self.cutoffs,
                                tuple(str(k) for k in range(1, self.cutoffs.shape[2] + 1)))}
            if base in table:
                arr, ids = table[base]
                if key in ids:
                    return arr[:, :, ids.index(key)]
        raise KeyError(f"unknown parameter {name!r}; available: "
                       + ", ".join(self.parameter_names()))

    def parameter_names(self) -> list[str]:
        names = list(self.scalars)
        names += [f"theta[{p}]" for p in self.proposal_ids]
        names += [f"nu[{a}]" for a in self.assessor_ids]
        if self.model.panel_effect:
            names += [f"delta[{k}]" for k in (self.panel_ids or ())]
        names += [f"cutoff[{k}]" for k in range(1, self.cutoffs.shape[2] + 1)]
        return names


def compute_rhats(draws: PosteriorDraws) -> tuple[dict, tuple]:
    rhats, degenerate = {}, []
    for name, arr in draws.monitored().items():
        r, deg = split_rhat(arr)
        rhats[name] = r
        if deg:
            degenerate.append(name)
    return rhats, tuple(degenerate)


def chain_seeds(master_seed: int, n_chains: int, attempt: int = 0) -> list:
    """Independent per-chain seed sequences derived from the master seed."""
    return np.random.SeedSequence([int(master_seed), int(attempt)]).spawn(n_chains)


def _run_chains(ds, cfg, prior, mcmc, attempt, fixed=(), init=None,
                collapse=None) -> PosteriorDraws:
    arr = _arrays(ds, cfg, prior)
    mask = _fixed_mask(fixed, cfg)
    if collapse is None:
        collapse = not mask[K.B_LAMBDA]
    n_keep = mcmc.n_keep
    n_total = mcmc.n_adapt + mcmc.n_iter
    keep_from = mcmc.n_adapt + mcmc.n_burnin
    n_panel = max(ds.n_panels, 1) if cfg.panel_effect else 1
    n_cut = cfg.n_levels - 1 if cfg.ordinal else 0
    C = mcmc.n_chains
    th = np.empty((C, n_keep, ds.n_proposals))
    nu = np.empty((C, n_keep, ds.n_assessors))
    de = np.empty((C, n_keep, n_panel))
    cu = np.empty((C, n_keep, n_cut))
    sc = np.empty((C, n_keep, K.N_SCALARS))
    lam_sum = np.zeros(ds.n_obs)
    seeds = chain_seeds(mcmc.master_seed, C, attempt)
    for c in range(C):
        rng = np.random.default_rng(seeds[c])
        start = initial_state(ds, cfg, prior, rng) if init is None else init.copy()
        _check_dims(start, ds, cfg)
        theta, lam, nu_c, delta, omega, cut, x, scal = _state_buffers(start, ds, cfg)
        chain_lam = np.zeros(ds.n_obs)
        status, it = K.run_chain(
            rng, n_total, keep_from, mcmc.thin, arr.ybar, arr.y, arr.level,
            arr.prop, arr.assr, arr.panel, arr.lybar, arr.prop_ptr, arr.prop_obs,
            arr.level_ptr, arr.level_obs, arr.n_obs_assr, theta, lam, nu_c, delta,
            omega, cut, x, scal, arr.prior, arr.tuning, mask, *arr.flags, collapse,
            th[c], nu[c], de[c], cu[c], sc[c], chain_lam)
        if status:
            _raise_status(status, it)
        lam_sum += chain_lam
    scalars = {name: sc[:, :, i] for i, name in enumerate(SCALAR_NAMES)}
    return PosteriorDraws(
        theta=th, nu=nu, delta=de, cutoffs=cu, scalars=scalars,
        lambda_mean=lam_sum / (C * n_keep), proposal_ids=ds.proposal_ids,
        assessor_ids=ds.assessor_ids,
        panel_ids=ds.panel_ids if cfg.panel_effect else None, model=cfg,
        mcmc=mcmc, seeds=tuple(int(s.generate_state(1)[0]) for s in seeds))


def run_sampler(ds: ScoreDataset, model: ModelConfig | None = None,
                prior: PriorConfig | None = None, mcmc: McmcConfig | None = None,
                *, fixed=(), init: ParameterState | None = None,
                collapse: bool | None = None, check_convergence: bool = True
                ) -> PosteriorDraws:
    """Run all chains, extending them until split-R-hat <= threshold.

    Non-convergence within ``mcmc.max_total_iter`` is not an error: the
    result has ``converged=False``, a message in ``warnings`` and a
    :class:`ConvergenceWarning` is emitted.
    """
    model = model or ModelConfig()
    prior = prior or PriorConfig()
    mcmc = mcmc or McmcConfig()
    model.check_dataset(ds)

    def run(cfg, attempt):
        d = _run_chains(ds, model, prior, cfg, attempt, fixed, init, collapse)
        if cfg.n_chains < 2 or cfg.n_keep < 4:
            return d, {}
        rh, deg = compute_rhats(d)
        d.rhat, d.rhat_degenerate = rh, deg
        return d, rh

    if not check_convergence:
        draws, _ = run(mcmc, 0)
        return draws
    draws, rhats, ok, used, attempts = extend_until_converged(run, mcmc)
    draws.converged = ok
    draws.attempts = attempts
    draws.mcmc = used
    if not ok:
        worst = max(rhats, key=rhats.get)
        msg = (f"chains did not converge: max R-hat {rhats[worst]:.3f} ({worst}) "
               f"after {used.n_iter} iterations per chain")
        draws.warnings.append(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return draws
