"""Pure-numpy fallback for the numerical kernels.

Mirrors the API of the compiled ``_kernels`` extension. Every function here
is vectorized; the compiled version loops element-wise and terminates the
Bessel series early, which is where its speed comes from.
"""

import math

import numpy as np

# Asymptotic expansion is used at or above this argument (raised for
# high orders, where the alternating expansion cancels badly).
SWITCH_ARG = 30.0
MAX_SWITCH_ARG = 600.0
_SERIES_TOL = 1e-17
_MAX_TERMS = 2000


def switch_arg(nu):
    return min(max(SWITCH_ARG, nu * nu), MAX_SWITCH_ARG)


def _log_series(nu, y):
    # log sum_j y^j / (j! Gamma(j+nu+1)), y >= 0
    y = np.asarray(y, dtype=float)
    term = np.ones_like(y)
    total = np.ones_like(y)
    active = np.ones(y.shape, dtype=bool)
    j = 0
    while active.any() and j < _MAX_TERMS:
        term = np.where(active, term * y / ((j + 1.0) * (j + nu + 1.0)), 0.0)
        total = total + term
        active = term > _SERIES_TOL * total
        j += 1
    return np.log(total) - math.lgamma(nu + 1.0)


def _log_asymptotic(nu, z):
    # log I_nu(z) for large z
    z = np.asarray(z, dtype=float)
    mu = 4.0 * nu * nu
    total = np.ones_like(z)
    term = np.ones_like(z)
    prev = np.full(z.shape, np.inf)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 200):
        new = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        grow = np.abs(new) >= prev
        active &= ~grow
        if not active.any():
            break
        term = np.where(active, new, term)
        total = total + np.where(active, new, 0.0)
        prev = np.where(active, np.abs(new), prev)
        active &= np.abs(new) > _SERIES_TOL * np.abs(total)
    return z - 0.5 * np.log(2.0 * np.pi * z) + np.log(total)


def log_scaled_bessel(nu, y):
    """``log(I_nu(z) / (z/2)**nu)`` with ``z = 2*sqrt(y)``; finite at y=0."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    z = 2.0 * np.sqrt(y)
    big = z >= switch_arg(nu)
    if (~big).any():
        out[~big] = _log_series(nu, y[~big])
    if big.any():
        zb = z[big]
        out[big] = _log_asymptotic(nu, zb) - nu * np.log(0.5 * zb)
    return out


def log_bessel_i(nu, x):
    """log I_nu(x) for x >= 0 (``-inf`` at x=0 when nu > 0)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        lead = nu * np.log(0.5 * x) if nu > 0 else np.zeros_like(x)
    return lead + log_scaled_bessel(nu, 0.25 * x * x)


def transition_params(k, m, noise_var):
    s = m * noise_var
    mean_scale = k * (k + 1 + s) / ((k + 1) * (k + s))
    var = s * (k + 1 + s) / ((k + 1) ** 2 * (k + s))
    return mean_scale, var


def transition_density(v_from, v_to, k, m, noise_var):
    """Matrix ``f[i, j]`` of the density of V_{k+1}=v_to[j] given V_k=v_from[i].

    V_{k+1} is (var/2) times a noncentral chi-square with 2m degrees of
    freedom; the density is assembled in log domain.
    """
    v_from = np.asarray(v_from, dtype=float)[:, None]
    v_to = np.asarray(v_to, dtype=float)[None, :]
    mean_scale, var = transition_params(k, m, noise_var)
    nu = m - 1.0
    theta = 2.0 * mean_scale * mean_scale * v_from / var
    t = v_to / var
    y = 0.5 * theta * t
    shape = np.broadcast(theta, t).shape
    logs = log_scaled_bessel(nu, np.broadcast_to(y, shape).ravel()).reshape(shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = nu * np.log(t) if nu > 0 else np.zeros_like(t)
    logf = -math.log(var) - t - 0.5 * theta + lead + logs
    return np.exp(logf)
