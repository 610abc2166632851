"""Offline preamble-length optimization.

With LS estimation on an i.i.d. Rayleigh channel and ``q``-dimensional
feedback, the energy delivered by a fixed preamble of ``tau`` symbols is

    E(tau) = (T - tau) (G tau + 2 m^2 sigma^2) / (2 (tau + m^2 sigma^2)),

where ``G = G_{m,q}`` sums the means of the ``q`` largest of ``m`` i.i.d.
chi-square(2) variables.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np

from .beamforming import batch_conditional_correlation
from .channel import covariance_factor, complex_normal
from .estimation import (LMMSE, LS, lmmse_error_cov, lmmse_gain, lmmse_preamble,
                         ls_preamble, partial_feedback)


@lru_cache(maxsize=None)
def _order_stat_mean_exact(m, r):
    total = Fraction(0)
    n = m - r + 1
    for s in range(1, n + 1):
        sign = 1 if s % 2 else -1
        total += Fraction(sign * s, math.factorial(n - s) * math.factorial(s) * (r + s - 1) ** 2)
    return Fraction(2 * math.factorial(m), math.factorial(r - 1)) * total


def order_stat_mean(m, r):
    """Mean of the ``r``-th largest of ``m`` i.i.d. chi-square(2) variables.

    The alternating sum is evaluated in exact rational arithmetic.
    """
    if not 1 <= r <= m:
        raise ValueError(f"need 1 <= r <= m, got m={m}, r={r}")
    return float(_order_stat_mean_exact(int(m), int(r)))


def g_factor(m, q):
    if not 1 <= q <= m:
        raise ValueError(f"need 1 <= q <= m, got m={m}, q={q}")
    return float(sum(_order_stat_mean_exact(int(m), r) for r in range(1, q + 1)))


@dataclass(frozen=True)
class GTable:
    entries: dict

    def __getitem__(self, mq):
        return self.entries[mq]

    def rows(self):
        m_max = max(m for m, _ in self.entries)
        for m in range(1, m_max + 1):
            yield m, [self.entries[(m, q)] for q in range(1, m + 1)]


def g_table(m_max=10):
    return GTable({(m, q): g_factor(m, q)
                   for m in range(1, m_max + 1) for q in range(1, m + 1)})


def energy_of_tau(tau, T, m, q, noise_var, G=None):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau > T) or np.any(tau < 0):
        raise ValueError("tau must lie in [0, T]")
    G = g_factor(m, q) if G is None else G
    a = m * m * noise_var
    return (T - tau) * (G * tau + 2 * a) / (2 * (tau + a))


def tau_stationary_point(T, m, q, noise_var, G=None):
    G = g_factor(m, q) if G is None else G
    a = m * m * noise_var
    return -a + m * math.sqrt(noise_var * (a + T) * (G - 2) / G)


def optimal_tau(T, m, q, noise_var, multiple_of_m=True):
    """Optimal fixed preamble length and the energy it delivers.

    ``multiple_of_m=False`` compares the floor and ceiling of the continuous
    stationary point; ``True`` compares the two neighbouring multiples of
    ``m``. Ties go to the shorter preamble.
    """
    G = g_factor(m, q)
    if noise_var > T * (G - 2) / (2 * m * m):
        return 0, float(energy_of_tau(0, T, m, q, noise_var, G))
    tau1 = tau_stationary_point(T, m, q, noise_var, G)
    if multiple_of_m:
        top = (T // m) * m
        if T % m == 0:
            top -= m  # at least one slot left for WPT
        cands = {min(max(math.floor(tau1 / m) * m, 0), top),
                 min(max(math.ceil(tau1 / m) * m, 0), top)}
    else:
        cands = {min(max(math.floor(tau1), 0), T), min(max(math.ceil(tau1), 0), T)}
    best = max(sorted(cands), key=lambda t: (float(energy_of_tau(t, T, m, q, noise_var, G)), -t))
    return int(best), float(energy_of_tau(best, T, m, q, noise_var, G))


def exhaustive_tau(T, m, q, noise_var, multiple_of_m=True):
    """Brute-force argmax of ``energy_of_tau`` (first maximizer wins)."""
    if multiple_of_m:
        taus = np.arange(0, T - (m if T % m == 0 else 0) + 1, m)
    else:
        taus = np.arange(0, T + 1)
    E = energy_of_tau(taus, T, m, q, noise_var)
    i = int(np.argmax(E))
    return int(taus[i]), float(E[i])


@dataclass
class TauSweep:
    taus: np.ndarray
    analytic: np.ndarray      # (T - tau) E[gamma_1]
    analytic_se: np.ndarray
    realized: np.ndarray      # (T - tau) E[|w^H h|^2]
    realized_se: np.ndarray

    @property
    def tau_star(self):
        return int(self.taus[int(np.argmax(self.realized))])


def _mean_se(x):
    return x.mean(), x.std(ddof=1) / math.sqrt(len(x))


def fixed_length_energies(model, kind, q, T, k, h, noise):
    """Per-frame expected (``gamma_1``) and realized energies at ``tau = k m``.

    ``h`` is ``(n, m)``; ``noise`` is ``(n, >= k*m)`` unit-variance complex
    Gaussian noise, scaled here by ``sqrt(noise_var)``.
    """
    m = model.m
    n = h.shape[0]
    tau = k * m
    if k == 0:
        # isotropic transmission: per-symbol energy ||h||^2 / m
        e = np.sum(np.abs(h) ** 2, axis=1) / m
        iso = np.full(n, np.real(np.trace(model.covariance)) / m)
        return T * iso, T * e
    sigma = math.sqrt(model.noise_var)
    if kind == LS:
        pre = ls_preamble(m, k)
        W = np.linalg.solve(pre.gram, pre.X.conj().T)
        err = model.noise_var * np.linalg.inv(pre.gram)
    else:
        pre = lmmse_preamble(model.covariance, k, model.noise_var)
        W = lmmse_gain(pre.X, model.covariance, model.noise_var)
        err = lmmse_error_cov(pre.X, model.covariance, model.noise_var)
    y = h @ pre.X.T + sigma * noise[:, :tau]
    h_hat = y @ W.T
    _, idx = partial_feedback(h_hat, q)
    # the posterior only depends on which antennas are kept, not their order
    idx = np.sort(idx, axis=1)
    gamma = np.empty(n)
    realized = np.empty(n)
    cov = model.covariance
    for key in np.unique(idx, axis=0):
        rows = np.flatnonzero(np.all(idx == key, axis=1))
        ix = np.ix_(key, key)
        Rc = batch_conditional_correlation(h_hat[np.ix_(rows, key)], cov[ix], err[ix])
        vals, vecs = np.linalg.eigh(Rc)
        gamma[rows] = vals[:, -1]
        w = vecs[:, :, -1]
        realized[rows] = np.abs(np.sum(w.conj() * h[np.ix_(rows, key)], axis=1)) ** 2
    return (T - tau) * gamma, (T - tau) * realized


def optimal_tau_numeric(model, kind, q, T, n_samples=10_000, rng=None, seed=0):
    """Monte Carlo energy curve over ``tau in {0, m, ..., (N-1) m}``.

    Reports both the expected energy from the conditional correlation's top
    eigenvalue and the realized ``|w^H h|^2`` against the true channel; the
    argmax uses the realized column.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    if kind not in (LS, LMMSE):
        raise ValueError(f"unknown estimator kind {kind!r}")
    m = model.m
    N = T // m
    rng = np.random.default_rng(seed) if rng is None else rng
    L = covariance_factor(model.covariance)
    h = complex_normal(rng, (n_samples, m)) @ L.T
    noise = complex_normal(rng, (n_samples, (N - 1) * m))
    taus = np.arange(N) * m
    out = np.zeros((4, N))
    for k in range(N):
        a, r = fixed_length_energies(model, kind, q, T, k, h, noise)
        out[0, k], out[1, k] = _mean_se(a)
        out[2, k], out[3, k] = _mean_se(r)
    return TauSweep(taus, *out)


def antenna_energy(k, m, T, noise_var):
    """Full-feedback energy with ``k`` slots of ``m`` symbols each."""
    return m * (T - k * m) * (noise_var + k) / (m * noise_var + k)


def continuous_optimal_antennas(k, T, noise_var):
    return min(T / k, (-k + math.sqrt(k * k + T * noise_var)) / noise_var)


def best_integer_antennas(k, T, noise_var):
    mc = continuous_optimal_antennas(k, T, noise_var)
    cands = {max(1, math.floor(mc)), max(1, math.ceil(mc))}
    cands = [c for c in sorted(cands) if c * k <= T] or [1]
    return max(cands, key=lambda c: (antenna_energy(k, c, T, noise_var), -c))


def optimal_antennas(T, noise_var):
    """Optimal antenna count and the matching number of CE slots.

    The outer search ranks ``k`` by the energy at the continuous optimum
    ``m*(k)``; ``k = 0`` (no CE) delivers ``T`` for any ``m`` and is
    reported with ``m* = 1``.
    """
    best_k, best_e = 0, float(T)
    for k in range(1, int(T) + 1):
        e = antenna_energy(k, continuous_optimal_antennas(k, T, noise_var), T, noise_var)
        if e > best_e:
            best_k, best_e = k, e
    if best_k == 0:
        return 1, 0
    return best_integer_antennas(best_k, T, noise_var), best_k
