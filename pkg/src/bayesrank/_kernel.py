"""Compiled Metropolis-within-Gibbs sweep for the score model family.

The cell effects lambda (one per observed proposal/assessor pair) carry a
single observation each, so they are strongly confounded with the residual.
By default the kernel integrates them out when updating theta, nu, delta, the
variance parameters, the ordinal latents and the cutoffs, and then draws
lambda from its exact full conditional at the end of the sweep (a partially
collapsed Gibbs sampler with the same stationary distribution). With
``collapse=False`` every block is updated conditionally on lambda instead,
which is what the single-block oracle tests use.
"""
import math

import numpy as np
from numba import njit

from ._numerics import (log_interval_prob, slice_shrink_added_variance,
                        slice_shrink_sd_suff, trunc_normal)

# scalar slots
TAU_THETA, TAU_LAMBDA, TAU_DELTA, SIGMA, ALPHA, BETA, TAU_OMEGA = range(7)
N_SCALARS = 7

# update blocks that can be frozen
(B_THETA, B_LAMBDA, B_NU, B_DELTA, B_TAU_THETA, B_TAU_LAMBDA, B_TAU_DELTA,
 B_SIGMA, B_ALPHA_BETA, B_OMEGA, B_TAU_OMEGA, B_CUTOFFS, B_LATENT) = range(13)
N_BLOCKS = 13
BLOCK_NAMES = ("theta", "lambda", "nu", "delta", "tau_theta", "tau_lambda",
               "tau_delta", "sigma", "alpha_beta", "omega", "tau_omega",
               "cutoffs", "latent")

# prior slots
P_SD_LO, P_SD_HI, P_NU_SD, P_AB_SD, P_TAU_OMEGA_HI, P_CUT_LO, P_CUT_HI = range(7)
# tuning slots
T_STEP_A, T_STEP_B, T_STEP_OMEGA, T_CUT_RW, T_CUT_TRIES, T_POLAR_TRIES = range(6)

# status codes (0 = fine); index into BLOCK_NAMES + 1
OK = 0


@njit(cache=True)
def _obs_variance(o, prop, lybar, omega, scal, hetero):
    if hetero:
        p = prop[o]
        return math.exp(scal[ALPHA] + scal[BETA] * lybar[p] + omega[p])
    return scal[SIGMA] * scal[SIGMA]


@njit(cache=True)
def _lp_scale(alpha, beta, omega, lybar, prop, resid, tau_l2):
    # log-likelihood of residuals under the location-scale variance model
    out = 0.0
    for o in range(resid.shape[0]):
        p = prop[o]
        v = tau_l2 + math.exp(alpha + beta * lybar[p] + omega[p])
        out -= 0.5 * (math.log(v) + resid[o] * resid[o] / v)
    return out


@njit(cache=True)
def _lp_omega_one(p, om, alpha, beta, lybar, prop_ptr, prop_obs, resid, tau_l2):
    v = tau_l2 + math.exp(alpha + beta * lybar[p] + om)
    out = 0.0
    for t in range(prop_ptr[p], prop_ptr[p + 1]):
        r = resid[prop_obs[t]]
        out -= 0.5 * (math.log(v) + r * r / v)
    return out


@njit(cache=True)
def _lp_cut(k, cval, cut, level_ptr, level_obs, mean, sdv, n_cut):
    # marginal log-probability of the observations at the two levels
    # adjacent to cutoff k when that cutoff takes value cval
    out = 0.0
    for lv in (k, k + 1):  # zero-based level index
        if lv == 0:
            lo = -np.inf
        elif lv - 1 == k:
            lo = cval
        else:
            lo = cut[lv - 1]
        if lv == n_cut:
            hi = np.inf
        elif lv == k:
            hi = cval
        else:
            hi = cut[lv]
        for t in range(level_ptr[lv], level_ptr[lv + 1]):
            o = level_obs[t]
            s = sdv[o]
            out += log_interval_prob((lo - mean[o]) / s, (hi - mean[o]) / s)
    return out


@njit(cache=True)
def sweep(rng, ybar, y, level, prop, assr, panel, lybar,
          prop_ptr, prop_obs, level_ptr, level_obs, n_obs_assr,
          theta, lam, nu, delta, omega, cut, x, scal,
          prior, tuning, fixed, ordinal, hetero, has_panel, collapse,
          work_var, work_mean, work_sd, work_r, work_base,
          acc_prec, acc_b, acc_prec_j, acc_b_j, acc_prec_k, acc_b_k):
    """One full sweep, updating arrays in place. Returns a status code."""
    n = theta.shape[0]
    m = nu.shape[0]
    n_obs = y.shape[0]
    n_cut = cut.shape[0]
    lo = prior[P_SD_LO]
    hi = prior[P_SD_HI]
    tau_l2 = scal[TAU_LAMBDA] * scal[TAU_LAMBDA]
    z = x if ordinal else y

    for o in range(n_obs):
        work_var[o] = _obs_variance(o, prop, lybar, omega, scal, hetero)

    # marginal means/variances used by the latent and cutoff blocks
    if ordinal and (not fixed[B_CUTOFFS] or not fixed[B_LATENT]):
        for o in range(n_obs):
            if collapse:
                work_mean[o] = ybar + theta[prop[o]] + nu[assr[o]] + delta[panel[o]]
                work_sd[o] = math.sqrt(work_var[o] + tau_l2)
            else:
                work_mean[o] = ybar + theta[prop[o]] + lam[o] + delta[panel[o]]
                work_sd[o] = math.sqrt(work_var[o])

        if not fixed[B_CUTOFFS]:
            ntry = int(tuning[T_CUT_TRIES])
            h = tuning[T_CUT_RW]
            for k in range(n_cut):
                below = prior[P_CUT_LO] if k == 0 else cut[k - 1]
                above = prior[P_CUT_HI] if k == n_cut - 1 else cut[k + 1]
                cur = _lp_cut(k, cut[k], cut, level_ptr, level_obs,
                              work_mean, work_sd, n_cut)
                for _ in range(ntry):
                    if k == 0 or k == n_cut - 1:
                        # end cutoffs: symmetric random walk
                        prop_c = cut[k] + h * (2.0 * rng.random() - 1.0)
                    else:
                        # interior: uniform on the gap between the neighbours
                        prop_c = below + rng.random() * (above - below)
                    if prop_c <= below or prop_c >= above:
                        continue
                    new = _lp_cut(k, prop_c, cut, level_ptr, level_obs,
                                  work_mean, work_sd, n_cut)
                    if math.log(rng.random()) < new - cur:
                        cut[k] = prop_c
                        cur = new

        if not fixed[B_LATENT]:
            for o in range(n_obs):
                lv = level[o] - 1
                a = -np.inf if lv == 0 else cut[lv - 1]
                b = np.inf if lv == n_cut else cut[lv]
                x[o] = trunc_normal(rng, work_mean[o], work_sd[o], a, b)

    # proposal effects
    if not fixed[B_THETA]:
        for i in range(n):
            acc_prec[i] = 0.0
            acc_b[i] = 0.0
        for o in range(n_obs):
            p = prop[o]
            if collapse:
                w = work_var[o] + tau_l2
                r = z[o] - ybar - nu[assr[o]] - delta[panel[o]]
            else:
                w = work_var[o]
                r = z[o] - ybar - lam[o] - delta[panel[o]]
            acc_prec[p] += 1.0 / w
            acc_b[p] += r / w
        tt = scal[TAU_THETA]
        for i in range(n):
            prec = acc_prec[i] + 1.0 / (tt * tt)
            theta[i] = acc_b[i] / prec + rng.standard_normal() / math.sqrt(prec)
            if not math.isfinite(theta[i]):
                return B_THETA + 1

    # assessor means
    if not fixed[B_NU]:
        nsd = prior[P_NU_SD]
        for j in range(m):
            acc_prec_j[j] = 1.0 / (nsd * nsd)
            acc_b_j[j] = 0.0
        for o in range(n_obs):
            j = assr[o]
            if collapse:
                w = work_var[o] + tau_l2
                acc_prec_j[j] += 1.0 / w
                acc_b_j[j] += (z[o] - ybar - theta[prop[o]] - delta[panel[o]]) / w
            else:
                acc_prec_j[j] += 1.0 / tau_l2
                acc_b_j[j] += lam[o] / tau_l2
        for j in range(m):
            nu[j] = (acc_b_j[j] / acc_prec_j[j]
                     + rng.standard_normal() / math.sqrt(acc_prec_j[j]))
            if not math.isfinite(nu[j]):
                return B_NU + 1

    # panel effects
    if has_panel and not fixed[B_DELTA]:
        n_panel = delta.shape[0]
        td = scal[TAU_DELTA]
        for k in range(n_panel):
            acc_prec_k[k] = 1.0 / (td * td)
            acc_b_k[k] = 0.0
        for o in range(n_obs):
            k = panel[o]
            if collapse:
                w = work_var[o] + tau_l2
                r = z[o] - ybar - theta[prop[o]] - nu[assr[o]]
            else:
                w = work_var[o]
                r = z[o] - ybar - theta[prop[o]] - lam[o]
            acc_prec_k[k] += 1.0 / w
            acc_b_k[k] += r / w
        for k in range(n_panel):
            delta[k] = (acc_b_k[k] / acc_prec_k[k]
                        + rng.standard_normal() / math.sqrt(acc_prec_k[k]))
            if not math.isfinite(delta[k]):
                return B_DELTA + 1

    # residuals for the variance block
    for o in range(n_obs):
        if collapse:
            work_r[o] = z[o] - ybar - theta[prop[o]] - nu[assr[o]] - delta[panel[o]]
        else:
            work_r[o] = z[o] - ybar - theta[prop[o]] - lam[o] - delta[panel[o]]

    if not fixed[B_TAU_LAMBDA]:
        if collapse:
            scal[TAU_LAMBDA] = slice_shrink_added_variance(
                rng, scal[TAU_LAMBDA], work_r, work_var, lo, hi)
        else:
            ss = 0.0
            for o in range(n_obs):
                d = lam[o] - nu[assr[o]]
                ss += d * d
            scal[TAU_LAMBDA] = slice_shrink_sd_suff(
                rng, scal[TAU_LAMBDA], n_obs, ss, lo, hi)
        tau_l2 = scal[TAU_LAMBDA] * scal[TAU_LAMBDA]
    t_add = tau_l2 if collapse else 0.0

    if not hetero:
        if not fixed[B_SIGMA]:
            if collapse:
                for o in range(n_obs):
                    work_base[o] = tau_l2
                scal[SIGMA] = slice_shrink_added_variance(
                    rng, scal[SIGMA], work_r, work_base, lo, hi)
            else:
                ss = 0.0
                for o in range(n_obs):
                    ss += work_r[o] * work_r[o]
                scal[SIGMA] = slice_shrink_sd_suff(rng, scal[SIGMA], n_obs, ss, lo, hi)
            if not math.isfinite(scal[SIGMA]):
                return B_SIGMA + 1
        if collapse and not fixed[B_SIGMA] and not fixed[B_TAU_LAMBDA]:
            # tau_lambda^2 + sigma^2 is all the collapsed likelihood sees; the
            # polar angle given the radius is uniform on the admissible arc
            radius = math.sqrt(tau_l2 + scal[SIGMA] * scal[SIGMA])
            for _ in range(int(tuning[T_POLAR_TRIES])):
                phi = 0.5 * math.pi * rng.random()
                tl = radius * math.cos(phi)
                sg = radius * math.sin(phi)
                if lo < tl <= hi and lo < sg <= hi:
                    scal[TAU_LAMBDA] = tl
                    scal[SIGMA] = sg
                    break
            tau_l2 = scal[TAU_LAMBDA] * scal[TAU_LAMBDA]
            t_add = tau_l2
        for o in range(n_obs):
            work_var[o] = scal[SIGMA] * scal[SIGMA]
    else:
        ab_sd = prior[P_AB_SD]
        if not fixed[B_ALPHA_BETA]:
            # random walk in (alpha + beta*mean(log ybar_i), beta), which
            # removes most of the posterior correlation; unit Jacobian
            mbar = 0.0
            for i in range(n):
                mbar += lybar[i]
            mbar /= n
            cur = _lp_scale(scal[ALPHA], scal[BETA], omega, lybar, prop, work_r, t_add)
            cur -= 0.5 * (scal[ALPHA] ** 2 + scal[BETA] ** 2) / (ab_sd * ab_sd)
            a_c = scal[ALPHA] + scal[BETA] * mbar + tuning[T_STEP_A] * rng.standard_normal()
            b_new = scal[BETA] + tuning[T_STEP_B] * rng.standard_normal()
            a_new = a_c - b_new * mbar
            new = _lp_scale(a_new, b_new, omega, lybar, prop, work_r, t_add)
            new -= 0.5 * (a_new ** 2 + b_new ** 2) / (ab_sd * ab_sd)
            if math.log(rng.random()) < new - cur:
                scal[ALPHA] = a_new
                scal[BETA] = b_new
        if not fixed[B_OMEGA]:
            to = scal[TAU_OMEGA]
            for i in range(n):
                cur = _lp_omega_one(i, omega[i], scal[ALPHA], scal[BETA], lybar,
                                    prop_ptr, prop_obs, work_r, t_add)
                cur -= 0.5 * omega[i] ** 2 / (to * to)
                om = omega[i] + tuning[T_STEP_OMEGA] * rng.standard_normal()
                new = _lp_omega_one(i, om, scal[ALPHA], scal[BETA], lybar,
                                    prop_ptr, prop_obs, work_r, t_add)
                new -= 0.5 * om * om / (to * to)
                if math.log(rng.random()) < new - cur:
                    omega[i] = om
        if not fixed[B_TAU_OMEGA]:
            ss = 0.0
            for i in range(n):
                ss += omega[i] * omega[i]
            scal[TAU_OMEGA] = slice_shrink_sd_suff(
                rng, scal[TAU_OMEGA], n, ss, 0.0, prior[P_TAU_OMEGA_HI])
        for o in range(n_obs):
            work_var[o] = _obs_variance(o, prop, lybar, omega, scal, hetero)
            if not math.isfinite(work_var[o]):
                return B_ALPHA_BETA + 1

    # cell effects from their exact full conditional
    if not fixed[B_LAMBDA]:
        for o in range(n_obs):
            r = z[o] - ybar - theta[prop[o]] - delta[panel[o]]
            prec = 1.0 / work_var[o] + 1.0 / tau_l2
            mean = (r / work_var[o] + nu[assr[o]] / tau_l2) / prec
            lam[o] = mean + rng.standard_normal() / math.sqrt(prec)
            if not math.isfinite(lam[o]):
                return B_LAMBDA + 1

    if not fixed[B_TAU_THETA]:
        ss = 0.0
        for i in range(n):
            ss += theta[i] * theta[i]
        scal[TAU_THETA] = slice_shrink_sd_suff(rng, scal[TAU_THETA], n, ss, lo, hi)

    if has_panel and not fixed[B_TAU_DELTA]:
        ss = 0.0
        for k in range(delta.shape[0]):
            ss += delta[k] * delta[k]
        scal[TAU_DELTA] = slice_shrink_sd_suff(
            rng, scal[TAU_DELTA], delta.shape[0], ss, lo, hi)
    return OK


@njit(cache=True)
def run_chain(rng, n_total, keep_from, thin, ybar, y, level, prop, assr, panel,
              lybar, prop_ptr, prop_obs, level_ptr, level_obs, n_obs_assr,
              theta, lam, nu, delta, omega, cut, x, scal,
              prior, tuning, fixed, ordinal, hetero, has_panel, collapse,
              out_theta, out_nu, out_delta, out_cut, out_scal, lam_sum):
    """Run ``n_total`` sweeps, storing every ``thin``-th sweep from ``keep_from``.

    Returns (status, sweep index at failure or n_total).
    """
    n = theta.shape[0]
    m = nu.shape[0]
    n_obs = y.shape[0]
    n_panel = delta.shape[0]
    work_var = np.empty(n_obs)
    work_mean = np.empty(n_obs)
    work_sd = np.empty(n_obs)
    work_r = np.empty(n_obs)
    work_base = np.empty(n_obs)
    acc_prec = np.empty(n)
    acc_b = np.empty(n)
    acc_prec_j = np.empty(m)
    acc_b_j = np.empty(m)
    acc_prec_k = np.empty(n_panel)
    acc_b_k = np.empty(n_panel)
    row = 0
    for it in range(n_total):
        status = sweep(rng, ybar, y, level, prop, assr, panel, lybar,
                       prop_ptr, prop_obs, level_ptr, level_obs, n_obs_assr,
                       theta, lam, nu, delta, omega, cut, x, scal,
                       prior, tuning, fixed, ordinal, hetero, has_panel, collapse,
                       work_var, work_mean, work_sd, work_r, work_base,
                       acc_prec, acc_b, acc_prec_j, acc_b_j, acc_prec_k, acc_b_k)
        if status != OK:
            return status, it
        if it >= keep_from and (it - keep_from) % thin == 0:
            out_theta[row, :] = theta
            out_nu[row, :] = nu
            out_delta[row, :] = delta
            out_cut[row, :] = cut
            out_scal[row, :] = scal
            lam_sum += lam
            row += 1
    return OK, n_total
