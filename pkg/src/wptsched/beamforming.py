"""Energy beamforming from an imperfect channel estimate.

The harvested energy per symbol for unit-norm ``w`` is ``w^H R_c w`` where
``R_c = E[h h^H | h_hat]``; it is maximized by the top eigenvector of
``R_c``. For the LS estimator on an uncorrelated channel the expected energy
after stopping at slot ``k`` is affine in the estimate power ``v``:
``A_k (B_k + C_k v)``.
"""

from dataclasses import dataclass

import numpy as np

from .channel import conditional_channel_stats, conditional_correlation
from .errors import ConfigError
from .estimation import LMMSE, LS, partial_feedback


class BeamformingError(ConfigError):
    pass


@dataclass(frozen=True)
class Beamformer:
    w: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.w) - 1.0) > 1e-12:
            raise BeamformingError("beamformer must have unit norm")


@dataclass(frozen=True)
class StopEnergyCoeffs:
    A: float
    B: float
    C: float
    D: float | None
    F: float | None
    G: float | None


def ls_uncorrelated_correlation(h_hat_q, sigma_e2, scale=1.0):
    """``c s/(c+s) I + c^2 h h^H/(c+s)^2`` for ``R_q = c I``, ``R_e = s I``.

    With ``c = 1`` this is ``s/(1+s) I + h h^H/(1+s)^2``.
    """
    h = np.asarray(h_hat_q, dtype=complex)
    c, s = scale, sigma_e2
    q = h.shape[0]
    return (c * s / (c + s)) * np.eye(q) + (c / (c + s)) ** 2 * np.outer(h, h.conj())


def lmmse_uncorrelated_correlation(h_hat_q, sigma_e2, m):
    """``s/(m+2s) I + ((m+s)/(m+2s))^2 h h^H``.

    ``sigma_e2`` is the LS-equivalent error variance; the LMMSE error
    variance it corresponds to is ``sigma_e2/(m + sigma_e2)``.
    """
    h = np.asarray(h_hat_q, dtype=complex)
    s = sigma_e2
    q = h.shape[0]
    return (s / (m + 2 * s)) * np.eye(q) + ((m + s) / (m + 2 * s)) ** 2 * np.outer(h, h.conj())


def _restrict(est, model, q):
    m = model.m
    q = m if q is None else q
    values, idx = partial_feedback(est.h_hat, q)
    ix = np.ix_(idx, idx)
    return values, model.covariance[ix], est.error_cov[ix]


def generic_correlation(est, model, q=None):
    """Conditional correlation through the general Gaussian posterior."""
    h_q, R_q, Re_q = _restrict(est, model, q)
    return conditional_correlation(conditional_channel_stats(h_q, R_q, Re_q))


def conditional_correlation_matrix(est, model, q=None):
    """``E[h_q h_q^H | h_hat_q]`` dispatched on estimator kind and correlation.

    LS uses the estimate-plus-independent-error model with prior ``R_q``;
    LMMSE plugs the LMMSE error covariance into the same posterior. The
    uncorrelated cases use their closed rank-one-plus-identity forms.
    """
    if est.k == 0 or est.error_cov is None:
        raise BeamformingError("no channel estimate available (k = 0)")
    h_q, R_q, Re_q = _restrict(est, model, q)
    if model.is_uncorrelated and np.allclose(Re_q, Re_q[0, 0] * np.eye(len(h_q)), atol=1e-14):
        c = float(R_q[0, 0].real)
        s = float(Re_q[0, 0].real)
        if est.kind == LS:
            return ls_uncorrelated_correlation(h_q, s, c)
        if est.kind == LMMSE and c == 1.0:
            m = model.m
            return lmmse_uncorrelated_correlation(h_q, m * s / (1.0 - s), m)
    if est.kind not in (LS, LMMSE):
        raise BeamformingError(f"unknown estimator kind {est.kind!r}")
    return conditional_correlation(conditional_channel_stats(h_q, R_q, Re_q))


def batch_conditional_correlation(h_hat_q, R_q, Re_q):
    """``E[h h^H | h_hat]`` for a stack ``(n, q)`` of estimates sharing ``R_q``, ``Re_q``."""
    S = R_q + Re_q
    A = R_q @ np.linalg.inv(S)
    cov = A @ Re_q
    cov = 0.5 * (cov + cov.conj().T)
    mu = h_hat_q @ A.T
    return cov[None, :, :] + mu[:, :, None] * mu.conj()[:, None, :]


def _fix_phase(w):
    i = int(np.argmax(np.abs(w)))
    a = w[i]
    if abs(a) > 0:
        w = w * (abs(a) / a)
    return w


def optimal_beamformer(R_cond, tol=1e-10):
    """Top eigenvector of ``R_cond`` with its largest entry real and >= 0."""
    R_cond = np.asarray(R_cond, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(R_cond))))
    if np.max(np.abs(R_cond - R_cond.conj().T)) > tol * scale:
        raise BeamformingError("conditional correlation matrix is not Hermitian")
    _, vecs = np.linalg.eigh(0.5 * (R_cond + R_cond.conj().T))
    w = _fix_phase(vecs[:, -1])
    return Beamformer(w / np.linalg.norm(w))


def batch_optimal_beamformers(R_cond):
    """Top eigenvectors for a stack ``(..., q, q)`` of Hermitian matrices."""
    _, vecs = np.linalg.eigh(R_cond)
    w = vecs[..., :, -1]
    i = np.argmax(np.abs(w), axis=-1)[..., None]
    a = np.take_along_axis(w, i, axis=-1)
    return w * (np.abs(a) / np.where(a == 0, 1, a))


def matched_beamformer(h_hat_q):
    h = np.asarray(h_hat_q, dtype=complex)
    n = np.linalg.norm(h)
    if n == 0:
        raise BeamformingError("zero estimate: fall back to isotropic transmission")
    return Beamformer(h / n)


def per_symbol_energy(w, R_cond):
    w = getattr(w, "w", w)
    return float(np.real(np.vdot(w, np.asarray(R_cond) @ w)))


def mrt_energy(h):
    h = np.asarray(h)
    return np.sum(np.abs(h) ** 2, axis=-1)


def stop_energy_coeffs(k, N, m, noise_var):
    """Coefficients of the stop energy at slot ``k`` and the one-step lookahead.

    At ``k = 0`` (no estimate; isotropic WPT) ``B = 1`` and ``C = 0``.
    """
    s = m * noise_var
    A = m * (N - k)
    B = s / (k + s)
    C = k * k / (k + s) ** 2
    if k <= N - 2:
        D = m * (N - k - 1)
        F = s * (k + s) * (k + s + m)
        G = (k + 1 + s) * (k + s) ** 2
    else:
        D = F = G = None
    return StopEnergyCoeffs(A, B, C, D, F, G)


def expected_stop_energy(v, k, N, m, noise_var):
    """Expected energy over the remaining ``N-k`` slots if CE stops at ``k``."""
    c = stop_energy_coeffs(k, N, m, noise_var)
    return c.A * (c.B + c.C * np.asarray(v, dtype=float))


def expected_next_stop_energy(v, k, N, m, noise_var):
    """Expected stop energy at ``k+1``, conditioned on ``V_k = v``."""
    if not 0 <= k <= N - 2:
        raise ValueError(f"lookahead needs 0 <= k <= N-2, got k={k}")
    c = stop_energy_coeffs(k, N, m, noise_var)
    s = m * noise_var
    return c.D * (k * k * (k + 1 + s) * np.asarray(v, dtype=float) + c.F) / c.G


def policy_gap(r, m, noise_var):
    """Expected gain of (continue, stop) over (stop, continue) at slot ``r``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    s = m * noise_var
    return m * m * (m - 1) * noise_var / ((r + s) * (r + 1 + s))
