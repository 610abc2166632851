"""Channel model, posterior channel statistics and the estimate-power kernel.

The channel is quasi-static flat Rayleigh fading, ``h ~ CN(0, pathloss * R)``,
drawn independently per frame. Estimates are produced one slot (``m``
symbols) at a time; ``v = ||h_hat||^2`` is the scalar that drives the
stopping policy.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate

from . import kernels
from .errors import ConfigError

HERMITIAN_TOL = 1e-12


class ChannelModelError(ConfigError):
    """Invalid channel-model parameters."""


def _check_hermitian(mat, name, tol=HERMITIAN_TOL):
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ChannelModelError(f"{name} must be square, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.conj().T)) > tol * scale:
        raise ChannelModelError(f"{name} is not Hermitian")


@dataclass(frozen=True)
class ChannelModel:
    """Generative law of the MISO link.

    Parameters
    ----------
    m : int
        Number of transmit antennas.
    R : ndarray
        ``m x m`` Hermitian positive-definite spatial covariance.
    noise_var : float
        Noise power per symbol, normalized to the preamble power.
    pathloss : float
        Gain multiplying ``R``.
    """

    m: int
    R: np.ndarray = field(repr=False)
    noise_var: float = 1.0
    pathloss: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ChannelModelError(f"m must be a positive integer, got {self.m}")
        R = np.array(self.R, dtype=complex)
        if R.shape != (self.m, self.m):
            raise ChannelModelError(f"R must be {self.m}x{self.m}, got {R.shape}")
        _check_hermitian(R, "R")
        R = 0.5 * (R + R.conj().T)
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ChannelModelError("R must be positive definite")
        if not self.noise_var > 0:
            raise ChannelModelError("noise_var must be positive")
        if self.pathloss < 0:
            raise ChannelModelError("pathloss must be nonnegative")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @classmethod
    def uncorrelated(cls, m, noise_var=1.0, pathloss=1.0):
        return cls(m, np.eye(m), noise_var, pathloss)

    @property
    def covariance(self):
        """Covariance of ``h``, i.e. ``pathloss * R``."""
        return self.pathloss * self.R

    @property
    def is_uncorrelated(self):
        d = self.R[0, 0].real
        return bool(np.allclose(self.R, d * np.eye(self.m), rtol=0, atol=1e-12))


@dataclass(frozen=True)
class FrameConfig:
    """``T`` symbols of CE+WPT, split into ``N`` slots of ``m`` symbols."""

    T: int
    N: int
    m: int

    def __post_init__(self):
        if self.T != self.m * self.N:
            raise ChannelModelError(
                f"T must equal m*N (T={self.T}, m={self.m}, N={self.N})")
        if self.N < 1 or self.m < 1:
            raise ChannelModelError("N and m must be positive")

    @classmethod
    def from_T(cls, T, m):
        if T % m:
            raise ChannelModelError(f"T={T} is not a multiple of m={m}")
        return cls(T, T // m, m)


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray


def make_exponential_covariance(m, xi):
    """Exponential-correlation matrix ``R[i, j] = xi**|i-j|``."""
    if not 0 <= xi < 1:
        raise ChannelModelError(f"xi must lie in [0, 1), got {xi}")
    if m < 1:
        raise ChannelModelError("m must be >= 1")
    idx = np.arange(m)
    return np.power(float(xi), np.abs(idx[:, None] - idx[None, :]))


def covariance_factor(cov, floor=1e-14):
    """Square-root factor ``L`` with ``L L^H = cov``.

    Cholesky first; near-singular input falls back to an eigendecomposition
    with eigenvalues floored at ``floor``.
    """
    cov = np.asarray(cov, dtype=complex)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.maximum(w, floor))


def complex_normal(rng, shape):
    """Standard circular complex Gaussian samples, ``E|x|^2 = 1``."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_channel(model, rng, size=None):
    """Draw ``h ~ CN(0, pathloss * R)``; ``size`` adds a leading batch axis."""
    shape = (model.m,) if size is None else (size, model.m)
    if model.pathloss == 0:
        return np.zeros(shape, dtype=complex)
    L = covariance_factor(model.covariance)
    w = complex_normal(rng, shape)
    return w @ L.T


def conditional_channel_stats(estimate_q, R_q, Re_q):
    """Posterior of ``h_q`` given ``h_hat_q = h_q + e_q``.

    Mean ``(Re R^-1 + I)^-1 h_hat`` and covariance ``(R^-1 + Re^-1)^-1``.
    """
    est = np.asarray(estimate_q, dtype=complex)
    R_q = np.atleast_2d(np.asarray(R_q, dtype=complex))
    Re_q = np.atleast_2d(np.asarray(Re_q, dtype=complex))
    q = est.shape[0]
    if R_q.shape != (q, q) or Re_q.shape != (q, q):
        raise ChannelModelError(
            f"dimension mismatch: estimate {q}, R {R_q.shape}, Re {Re_q.shape}")
    for name, mat in (("R_q", R_q), ("Re_q", Re_q)):
        if np.linalg.cond(mat) > 1e15:
            raise ChannelModelError(f"{name} is singular or ill-conditioned")
    # (Re R^-1 + I)^-1 = R (Re + R)^-1
    S = R_q + Re_q
    mean = R_q @ np.linalg.solve(S, est)
    # (R^-1 + Re^-1)^-1 = R (R + Re)^-1 Re
    cov = R_q @ np.linalg.solve(S, Re_q)
    cov = 0.5 * (cov + cov.conj().T)
    return GaussianPosterior(mean, cov)


def conditional_correlation(posterior):
    """``E[h h^H | h_hat] = Sigma + mean mean^H``."""
    mu = posterior.mean
    return posterior.covariance + np.outer(mu, mu.conj())


def estimate_transition_stats(k, m, noise_var):
    """Given ``h_hat_k``, ``h_hat_{k+1} ~ CN(mean_scale * h_hat_k, var * I)``.

    Valid for the LS recursion on an uncorrelated (``R = I``) channel.
    """
    if k < 1:
        raise ValueError("k must be >= 1; use marginal_power_* for the first slot")
    return kernels.transition_params(int(k), int(m), float(noise_var))


def noncentrality(v_k, k, m, noise_var):
    s = m * noise_var
    return 2.0 * k * k * (k + 1 + s) * np.asarray(v_k, dtype=float) / (s * (k + s))


def marginal_power_scale(k, m, noise_var):
    """Per-coefficient variance of ``h_hat_k`` (``R = I``): ``1 + m sigma^2/k``."""
    return 1.0 + m * noise_var / k


def estimate_power_pdf(v_next, v_k, k, m, noise_var):
    """Density of ``V_{k+1}`` at ``v_next`` given ``V_k = v_k``.

    For ``k = 0`` the estimate does not exist yet and the marginal law of
    ``V_1`` (a Gamma(m, 1 + m sigma^2) variable) is returned.
    """
    v_next = np.asarray(v_next, dtype=float)
    if np.any(v_next < 0) or np.any(np.asarray(v_k) < 0):
        raise ValueError("estimate powers must be nonnegative")
    if k == 0:
        scale = marginal_power_scale(1, m, noise_var)
        with np.errstate(divide="ignore"):
            logf = ((m - 1) * np.log(v_next) - v_next / scale
                    - math.lgamma(m) - m * math.log(scale))
        out = np.exp(logf)
        if m == 1:
            out = np.where(v_next == 0, 1.0 / scale, out)
        return out
    flat = np.atleast_1d(v_next).ravel()
    dens = kernels.transition_density(np.atleast_1d(v_k).ravel(), flat,
                                      int(k), int(m), float(noise_var))
    if np.ndim(v_k) == 0:
        dens = dens[0].reshape(np.shape(v_next))
    return dens


def estimate_power_mean(v_k, k, m, noise_var):
    """``E[V_{k+1} | V_k = v_k] = var * (m + theta/2)``; marginal mean at k=0."""
    if k == 0:
        return m * marginal_power_scale(1, m, noise_var)
    _, var = estimate_transition_stats(k, m, noise_var)
    return var * (m + 0.5 * noncentrality(v_k, k, m, noise_var))


def integrate_power_pdf(v_k, k, m, noise_var, moment=0):
    """Adaptive quadrature of ``v**moment * f(v | v_k)`` over ``[0, inf)``."""
    mean = estimate_power_mean(v_k, k, m, noise_var)
    if k == 0:
        sd = math.sqrt(m) * marginal_power_scale(1, m, noise_var)
    else:
        _, var = estimate_transition_stats(k, m, noise_var)
        theta = float(noncentrality(v_k, k, m, noise_var))
        sd = var * math.sqrt(m + theta)

    def f(v):
        return v ** moment * float(estimate_power_pdf(np.array([v]), v_k, k, m, noise_var)[0])

    lo = max(0.0, mean - 12 * sd)
    hi = mean + 40 * sd
    pts = sorted({lo, max(lo, mean - sd), mean, mean + sd, hi})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0]
    if lo > 0:
        total += integrate.quad(f, 0, lo, epsabs=0, epsrel=1e-10, limit=200)[0]
    total += integrate.quad(f, hi, np.inf, epsabs=0, epsrel=1e-10, limit=200)[0]
    return total
