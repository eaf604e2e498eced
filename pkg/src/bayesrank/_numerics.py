"""Scalar numerical primitives compiled with numba.

Everything here takes a ``numpy.random.Generator`` explicitly so that chains
are reproducible from their seeds. The normal CDF/quantile are written on top
of ``math.erfc`` rather than scipy so the compiled kernels can be cached.
"""
import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def ndtr(x):
    return 0.5 * math.erfc(-x / SQRT2)


# Acklam's rational approximation, polished by one Halley step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


@njit(cache=True)
def ndtri(p):
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement; the upper half is refined through symmetry to keep
    # the residual p - ndtr(x) well conditioned
    if x > 0.0:
        e = ndtr(-x) - (1.0 - p)
        u = e * SQRT2PI * math.exp(0.5 * x * x)
        return x + u / (1.0 - x * u / 2.0)
    e = ndtr(x) - p
    u = e * SQRT2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + x * u / 2.0)


@njit(cache=True)
def log_interval_prob(a, b):
    """log(Phi(b) - Phi(a)) for standardized bounds a < b."""
    if a > 0.0:
        p = ndtr(-a) - ndtr(-b)
    else:
        p = ndtr(b) - ndtr(a)
    if p <= 0.0:
        return -np.inf
    return math.log(p)


@njit(cache=True)
def _exp_tail(rng, a, b):
    # Robert (1995) exponential rejection for N(0,1) restricted to [a, b], a > 0
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / alpha)
        if z > b:
            continue
        d = z - alpha
        if rng.random() <= math.exp(-0.5 * d * d):
            return z


@njit(cache=True)
def trunc_std_normal(rng, a, b):
    """One draw of N(0, 1) restricted to (a, b]."""
    if a >= b:
        return a
    if a > 0.0:
        return -trunc_std_normal(rng, -b, -a)
    # now a <= 0; inverse CDF is accurate unless the whole interval sits
    # deep in the lower tail where ndtr underflows
    pa = ndtr(a)
    pb = ndtr(b)
    if pb - pa > 1e-300 and pb > 1e-280:
        x = ndtri(pa + rng.random() * (pb - pa))
        if x < a:
            x = a
        elif x > b:
            x = b
        return x
    return -_exp_tail(rng, -b, -a)


@njit(cache=True)
def trunc_normal(rng, mu, sd, lo, hi):
    return mu + sd * trunc_std_normal(rng, (lo - mu) / sd, (hi - mu) / sd)


@njit(cache=True)
def slice_shrink_sd_suff(rng, s0, count, ss, lo, hi):
    """Slice-sample an SD with target ``-count*log(s) - ss/(2 s^2)`` on (lo, hi].

    The initial bracket is the whole bounded support, so no stepping-out is
    needed; shrinkage alone converges geometrically.
    """
    logy = -count * math.log(s0) - ss / (2.0 * s0 * s0) + math.log(rng.random())
    left, right = lo, hi
    while True:
        s = left + rng.random() * (right - left)
        if s <= lo:
            s = s0
        lp = -count * math.log(s) - ss / (2.0 * s * s)
        if lp > logy:
            return s
        if s < s0:
            left = s
        else:
            right = s


@njit(cache=True)
def lp_added_variance(t, resid, base_var):
    """Sum of log N(resid_o; 0, t^2 + base_var_o), dropping constants."""
    t2 = t * t
    out = 0.0
    for o in range(resid.shape[0]):
        v = t2 + base_var[o]
        out -= 0.5 * (math.log(v) + resid[o] * resid[o] / v)
    return out


@njit(cache=True)
def slice_shrink_added_variance(rng, t0, resid, base_var, lo, hi):
    """Slice-sample an SD that adds its square to per-observation variances."""
    logy = lp_added_variance(t0, resid, base_var) + math.log(rng.random())
    left, right = lo, hi
    while True:
        t = left + rng.random() * (right - left)
        if t <= lo:
            t = t0
        if lp_added_variance(t, resid, base_var) > logy:
            return t
        if t < t0:
            left = t
        else:
            right = t


def truncated_normal(rng, mean, sd, lower, upper):
    """Vectorized draws from N(mean, sd^2) restricted to (lower, upper].

    Thin wrapper over the compiled scalar sampler; arguments broadcast.
    """
    mean, sd, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mean, sd, lower, upper)))
    return _trunc_normal_vec(rng, mean.ravel(), sd.ravel(), lower.ravel(),
                             upper.ravel()).reshape(mean.shape)


@njit(cache=True)
def _trunc_normal_vec(rng, mean, sd, lower, upper):
    out = np.empty(mean.shape[0])
    for i in range(mean.shape[0]):
        out[i] = trunc_normal(rng, mean[i], sd[i], lower[i], upper[i])
    return out
