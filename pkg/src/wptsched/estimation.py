"""LS and LMMSE channel estimation, preamble design and partial feedback."""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigError

LS = "LS"
LMMSE = "LMMSE"
KINDS = (LS, LMMSE)


class EstimationError(ConfigError):
    pass


@dataclass(frozen=True)
class Preamble:
    """Pilot matrix ``X`` (``tau x m``) spanning ``k`` slots; ``y = X h + z``."""

    X: np.ndarray
    k: int
    per_symbol_power: float

    @property
    def tau(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]

    @property
    def gram(self):
        return self.X.conj().T @ self.X


@dataclass(frozen=True)
class Estimate:
    """Channel estimate after ``k`` slots of CE.

    ``error_cov`` is ``None`` for ``k = 0`` (no observation yet, the estimate
    is the prior mean).
    """

    h_hat: np.ndarray
    k: int
    kind: str
    error_cov: np.ndarray | None

    @property
    def power(self):
        return float(np.vdot(self.h_hat, self.h_hat).real)


def initial_estimate(m, kind=LS):
    return Estimate(np.zeros(m, dtype=complex), 0, kind, None)


def ls_preamble(m, k):
    """Stacked ``k`` copies of ``I_m / sqrt(m)``: per-antenna power ``1/m``."""
    if k < 1:
        raise EstimationError("an LS preamble needs k >= 1 slots")
    block = np.eye(m) / math.sqrt(m)
    return Preamble(np.tile(block, (k, 1)).astype(complex), int(k), 1.0 / m)


def ls_estimate(y, preamble, noise_var):
    """Least-squares estimate ``(X^H X)^-1 X^H y``.

    For the orthogonal preamble this is the block average
    ``h + (sqrt(m)/k) sum_i z_i`` with error covariance ``(m sigma^2/k) I``.
    """
    y = np.asarray(y, dtype=complex)
    X = preamble.X
    if y.shape[0] != X.shape[0]:
        raise EstimationError(f"y has length {y.shape[0]}, preamble has {X.shape[0]} rows")
    gram = preamble.gram
    h_hat = np.linalg.solve(gram, X.conj().T @ y)
    error_cov = noise_var * np.linalg.inv(gram)
    return Estimate(h_hat, preamble.k, LS, 0.5 * (error_cov + error_cov.conj().T))


def ls_recursive_update(est, slot_observation, noise_var):
    """Fold one more slot of the orthogonal LS preamble into ``est``.

    ``slot_observation`` is the length-``m`` received block
    ``h/sqrt(m) + z_{k+1}``.
    """
    if est.kind != LS:
        raise EstimationError(f"recursive update needs an LS estimate, got {est.kind}")
    y = np.asarray(slot_observation, dtype=complex)
    m = y.shape[0]
    k = est.k
    h_hat = (k / (k + 1.0)) * est.h_hat + (math.sqrt(m) / (k + 1.0)) * y
    return Estimate(h_hat, k + 1, LS, (m * noise_var / (k + 1.0)) * np.eye(m))


def waterfill_level(eigvals, k, noise_var, tol=1e-12):
    """Solve ``sum_i [mu - 1/d_i]^+ = k / noise_var`` for ``mu`` by bisection.

    Returns ``mu`` refined to the exact active-set solution.
    """
    inv = 1.0 / np.asarray(eigvals, dtype=float)
    target = k / noise_var
    lo = inv.min()
    hi = inv.max() + 2.0 * target + 1.0

    def resid(mu):
        return np.maximum(mu - inv, 0.0).sum() - target

    assert resid(lo) <= 0 < resid(hi), "water level not bracketed"
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = resid(mid)
        if abs(r) < tol:
            break
        if r > 0:
            hi = mid
        else:
            lo = mid
    active = inv < mid
    mu = (target + inv[active].sum()) / active.sum()
    return mu


def lmmse_preamble(R, k, noise_var):
    """Waterfilling preamble over the eigenmodes of ``R`` (unitary factor = I).

    ``X = sqrt(sigma^2) [diag([mu - 1/d]^+)^(1/2); 0] B^H`` with
    ``R = B diag(d) B^H``; total preamble energy ``tr(X^H X) = k``.
    """
    if k < 1:
        raise EstimationError("an LMMSE preamble needs k >= 1 slots")
    R = np.asarray(R, dtype=complex)
    m = R.shape[0]
    d, B = np.linalg.eigh(R)
    if d.min() <= 0:
        raise EstimationError("R must be positive definite")
    mu = waterfill_level(d, k, noise_var)
    powers = noise_var * np.maximum(mu - 1.0 / d, 0.0)
    X = np.zeros((k * m, m), dtype=complex)
    X[:m] = np.diag(np.sqrt(powers)) @ B.conj().T
    return Preamble(X, int(k), 1.0 / m)


def lmmse_gain(X, R, noise_var, form="woodbury"):
    """Linear map ``W`` with ``h_hat = W y``.

    ``"direct"`` is ``R X^H (X R X^H + sigma^2 I)^-1``; ``"woodbury"`` is the
    equivalent ``(sigma^2 R^-1 + X^H X)^-1 X^H``.
    """
    X = np.asarray(X, dtype=complex)
    R = np.asarray(R, dtype=complex)
    if form == "direct":
        tau = X.shape[0]
        inner = X @ R @ X.conj().T + noise_var * np.eye(tau)
        return np.linalg.solve(inner.T, (R @ X.conj().T).T).T
    if form == "woodbury":
        inner = noise_var * np.linalg.inv(R) + X.conj().T @ X
        return np.linalg.solve(inner, X.conj().T)
    raise ValueError(f"unknown form {form!r}")


def lmmse_error_cov(X, R, noise_var):
    X = np.asarray(X, dtype=complex)
    P = np.linalg.inv(np.linalg.inv(R) + X.conj().T @ X / noise_var)
    return 0.5 * (P + P.conj().T)


def lmmse_estimate(y, preamble, R, noise_var, form="woodbury"):
    y = np.asarray(y, dtype=complex)
    if y.shape[0] != preamble.tau or np.shape(R) != (preamble.m, preamble.m):
        raise EstimationError("inconsistent dimensions for LMMSE estimation")
    W = lmmse_gain(preamble.X, R, noise_var, form)
    return Estimate(W @ y, preamble.k, LMMSE, lmmse_error_cov(preamble.X, R, noise_var))


def partial_feedback(h_hat, q):
    """Keep the ``q`` largest-magnitude coefficients.

    Returns ``(values, indices)`` sorted by descending magnitude; equal
    magnitudes keep the lower antenna index first.
    """
    h_hat = np.asarray(getattr(h_hat, "h_hat", h_hat))
    m = h_hat.shape[-1]
    if not 1 <= q <= m:
        raise EstimationError(f"q must lie in [1, {m}], got {q}")
    order = np.argsort(-np.abs(h_hat), axis=-1, kind="stable")[..., :q]
    return np.take_along_axis(h_hat, order, axis=-1), order
