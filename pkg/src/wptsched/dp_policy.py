"""Optimal stopping of channel estimation by backward induction.

The decision state after ``k`` CE slots is reduced to the estimate power
``v = ||h_hat_k||^2``. The value function is tabulated on a uniform grid
``{0, delta, ..., M delta}``; continuation values are Gauss-Legendre
integrals of the linearly interpolated next-slot value against the
transition density of the estimate power.

All quantities are in units where the per-antenna channel variance is one;
``effective_noise_var`` converts a channel model into that scale.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy import special, stats

from . import kernels
from .beamforming import expected_stop_energy, stop_energy_coeffs
from .channel import complex_normal, marginal_power_scale
from .errors import ConfigError, NumericalError
from .rng import DEFAULT_BLOCK, block_generator, iter_blocks

CONTINUE = "continue"
STOP = "stop"
COVERAGE = 0.9999
POLICY_FORMAT = "wptsched.policy"
POLICY_VERSION = 1


class GridCoverageError(ConfigError):
    def __init__(self, msg, required_M):
        super().__init__(msg)
        self.required_M = required_M


def effective_noise_var(model):
    """Noise variance after scaling the channel to unit per-antenna variance.

    Only the LS recursion on an uncorrelated channel reduces to the scalar
    estimate-power state, so correlated models are rejected.
    """
    if not model.is_uncorrelated:
        raise ConfigError("the stopping policy needs an uncorrelated channel (R = c I)")
    gain = channel_gain(model)
    if gain <= 0:
        raise ConfigError("channel gain must be positive")
    return model.noise_var / gain


def channel_gain(model):
    return float(model.pathloss * model.R[0, 0].real)


def coverage_quantile(m, noise_var, coverage=COVERAGE):
    """Quantile of ``V_1``, the widest of the estimate-power marginals."""
    return float(stats.gamma.ppf(coverage, m, scale=marginal_power_scale(1, m, noise_var)))


def default_grid(m, noise_var, M=2000):
    return coverage_quantile(m, noise_var) / M, M


def check_coverage(delta, M, m, noise_var):
    if not delta > 0 or M < 2:
        raise ConfigError("grid needs delta > 0 and M >= 2")
    need = coverage_quantile(m, noise_var)
    if delta * M < need * (1 - 1e-12):
        req = int(math.ceil(need / delta))
        raise GridCoverageError(
            f"grid [0, {delta * M:.6g}] covers less than {COVERAGE:.2%} of the "
            f"estimate-power mass; need M >= {req} at delta={delta:.6g}", req)


@dataclass
class ValueGrid:
    """Value function ``J[k, j]`` at ``v = j * delta`` and continuation ``Jbar``.

    ``Jbar[k]`` is the expected next-slot value given ``V_k = v``; it is
    undefined (NaN) for the last slot.
    """

    delta: float
    M: int
    J: np.ndarray
    Jbar: np.ndarray

    @property
    def v(self):
        return self.delta * np.arange(self.M + 1)


@dataclass
class PolicyTable:
    """Per-slot stopping thresholds.

    ``thresholds[k]`` is a sorted list ``l_1 < l_2 < ...``; the decision on
    ``[0, l_1)`` is continue and it flips at every threshold, so stop sets
    are ``[l_1, l_2) U [l_3, l_4) U ...``. An empty list means continue for
    every ``v``; ``[0.0]`` means always stop.
    """

    m: int
    N: int
    noise_var: float
    thresholds: list
    delta: float = float("nan")
    M: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.thresholds) != self.N:
            raise ConfigError(f"need {self.N} threshold lists, got {len(self.thresholds)}")
        self.thresholds = [[float(x) for x in t] for t in self.thresholds]
        for t in self.thresholds:
            if any(b <= a for a, b in zip(t, t[1:])) or any(x < 0 for x in t):
                raise ConfigError("threshold lists must be nonnegative and increasing")
        if self.thresholds[-1] != [0.0]:
            raise ConfigError("the last slot must always stop (threshold list [0.0])")

    def stop_mask(self, k, v):
        lam = np.asarray(self.thresholds[k])
        return np.searchsorted(lam, np.asarray(v, dtype=float), side="right") % 2 == 1

    def counts(self):
        return [len(t) for t in self.thresholds]

    def single_thresholds(self):
        """One threshold per slot, ``inf`` for continue-everywhere.

        Raises if some slot has a stop set that is not of the form ``[l, inf)``.
        """
        out = []
        for k, t in enumerate(self.thresholds):
            if len(t) > 1:
                raise NumericalError(f"slot {k} has {len(t)} thresholds")
            out.append(t[0] if t else math.inf)
        return np.array(out)

    def to_dict(self):
        return {"format": POLICY_FORMAT, "version": POLICY_VERSION,
                "m": self.m, "N": self.N, "noise_var": self.noise_var,
                "delta": self.delta, "M": self.M, "meta": self.meta,
                "thresholds": self.thresholds}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != POLICY_FORMAT or d.get("version") != POLICY_VERSION:
            raise ConfigError("not a version-1 policy file")
        return cls(int(d["m"]), int(d["N"]), float(d["noise_var"]), d["thresholds"],
                   float(d["delta"]), int(d["M"]), dict(d.get("meta", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def decide(policy, v, k, prev_decision=CONTINUE):
    """Stop/continue at slot ``k``; stopping is absorbing."""
    if prev_decision == STOP:
        return STOP
    if not 0 <= k < policy.N:
        raise ConfigError(f"slot {k} out of range for N={policy.N}")
    return STOP if bool(policy.stop_mask(k, v)) else CONTINUE


class _Continuation:
    """Expected next-slot value ``E[J_{k+1}(V_{k+1}) | V_k = v]``."""

    def __init__(self, k, N, m, noise_var, grid_v, J_next, nodes, weights):
        self.k, self.N, self.m, self.nv = k, N, m, noise_var
        self.nodes, self.weights = nodes, weights
        self.v_max = grid_v[-1]
        self.J_nodes = np.interp(nodes, grid_v, J_next)
        self.J_top = J_next[-1]
        c = stop_energy_coeffs(k + 1, N, m, noise_var)
        self.a, self.b = c.A * c.B, c.A * c.C

    def _means(self, v):
        _, var = kernels.transition_params(self.k, self.m, self.nv)
        theta = 2.0 * self.k ** 2 * (self.k + 1 + self.m * self.nv) * v / (
            self.m * self.nv * (self.k + self.m * self.nv))
        return var * (self.m + 0.5 * theta)

    def __call__(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.k == 0:
            scale = marginal_power_scale(1, self.m, self.nv)
            dens = stats.gamma.pdf(self.nodes, self.m, scale=scale)[None, :]
            P = dens * self.weights
            x = self.v_max / scale
            tail_mass = np.array([special.gammaincc(self.m, x)])
            tail_mom = np.array([self.m * scale * special.gammaincc(self.m + 1, x)])
            val = P @ self.J_nodes
        else:
            P = kernels.transition_density(v, self.nodes, self.k, self.m, self.nv) * self.weights
            val = P @ self.J_nodes
            tail_mass = np.maximum(1.0 - P.sum(axis=1), 0.0)
            tail_mom = np.maximum(self._means(v) - P @ self.nodes, 0.0)
        # J >= stop energy and J is nondecreasing: both bound the tail from below
        tail = np.maximum(self.a * tail_mass + self.b * tail_mom, self.J_top * tail_mass)
        out = val + tail
        if self.k == 0:
            out = np.full(v.shape, out[0])
        return out


def _refine(f, lo, hi, flo, tol):
    """Bisection for the sign change of ``f`` in ``[lo, hi]``; ``f >= 0`` counts as stop."""
    for _ in range(200):
        if hi - lo <= tol * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        fm = float(f(mid)[0])
        if not math.isfinite(fm):
            raise NumericalError(f"non-finite value during threshold search at v={mid}")
        if (fm >= 0) == (flo >= 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return hi


def _thresholds_from(diff, grid_v, f, tol):
    stop = diff >= 0
    out = [0.0] if stop[0] else []
    for j in np.flatnonzero(stop[1:] != stop[:-1]):
        out.append(_refine(f, grid_v[j], grid_v[j + 1], diff[j], tol))
    return out


def _search_beyond(f, v_max, tol, max_doublings=20):
    """Locate a stop threshold above the grid by doubling, then bisection.

    The continuation value there only needs the next slot's value beyond the
    grid, where that slot already stops, so the tail term is exact.
    """
    lo, flo = v_max, float(f(v_max)[0])
    hi = 2.0 * v_max
    for _ in range(max_doublings):
        fh = float(f(hi)[0])
        if fh >= 0:
            return [_refine(f, lo, hi, flo, tol)]
        lo, flo, hi = hi, fh, 2.0 * hi
    return []


def solve_bellman(cfg, model, delta=None, M=None, n_quad=1024, tol=1e-10):
    """Backward induction for the optimal CE stopping rule.

    Parameters
    ----------
    cfg : FrameConfig
    model : ChannelModel
        Must be uncorrelated; the LS recursion is assumed.
    delta, M : float, int, optional
        Grid step and size. By default ``M = 2000`` and ``delta * M`` is the
        99.99% quantile of ``V_1``.
    n_quad : int
        Gauss-Legendre nodes on ``[0, delta * M]``.

    Returns
    -------
    ValueGrid, PolicyTable
    """
    m, N = cfg.m, cfg.N
    if model.m != m:
        raise ConfigError(f"model has m={model.m}, frame has m={m}")
    nv = effective_noise_var(model)
    if delta is None:
        delta, M = default_grid(m, nv, 2000 if M is None else M)
    elif M is None:
        M = int(math.ceil(coverage_quantile(m, nv) / delta))
    check_coverage(delta, M, m, nv)
    grid_v = delta * np.arange(M + 1)
    x, w = np.polynomial.legendre.leggauss(n_quad)
    v_max = grid_v[-1]
    nodes = 0.5 * v_max * (x + 1.0)
    weights = 0.5 * v_max * w

    J = np.empty((N, M + 1))
    Jbar = np.full((N, M + 1), np.nan)
    thresholds = [None] * N
    J[N - 1] = expected_stop_energy(grid_v, N - 1, N, m, nv)
    thresholds[N - 1] = [0.0]
    for k in range(N - 2, -1, -1):
        cont = _Continuation(k, N, m, nv, grid_v, J[k + 1], nodes, weights)
        stop_e = expected_stop_energy(grid_v, k, N, m, nv)
        if k == 0:
            Jbar[0] = cont(np.zeros(1))[0]
            # only v = 0 is reachable before the first estimate
            thresholds[0] = [0.0] if stop_e[0] >= Jbar[0, 0] else []
        else:
            Jbar[k] = cont(grid_v)

            def diff_at(v, k=k, cont=cont):
                return expected_stop_energy(v, k, N, m, nv) - cont(v)

            diff = stop_e - Jbar[k]
            thresholds[k] = _thresholds_from(diff, grid_v, diff_at, tol)
            if diff[-1] < 0:
                thresholds[k] += _search_beyond(diff_at, v_max, tol)
        J[k] = np.maximum(stop_e, Jbar[k])
        if not np.all(np.isfinite(J[k])):
            raise NumericalError(f"value function is not finite at slot {k}")
    meta = {"n_quad": int(n_quad), "gain": channel_gain(model),
            "raw_noise_var": float(model.noise_var)}
    policy = PolicyTable(m, N, nv, thresholds, float(delta), int(M), meta)
    return ValueGrid(float(delta), int(M), J, Jbar), policy


def threshold_closed_form_last_two(cfg, model):
    """``(0, lambda_{N-2})`` from the one-step lookahead.

    Stopping at ``k = N-2`` beats one more slot of CE when
    ``A (B + C v) >= D (k^2 (k+1+s) v + F) / G`` with ``s = m sigma^2``.
    A vanishing denominator yields 0.
    """
    N, m = cfg.N, cfg.m
    if N < 2:
        raise ConfigError("need N >= 2")
    nv = effective_noise_var(model)
    k = N - 2
    s = m * nv
    c = stop_energy_coeffs(k, N, m, nv)
    num = c.A * c.B * c.G - c.D * c.F
    den = c.D * k * k * (k + 1 + s) - c.A * c.G * c.C
    if den == 0:
        return 0.0, 0.0
    return 0.0, max(num / den, 0.0)


def estimate_powers(h, z, noise_var):
    """LS estimates and their powers after each of ``N-1`` CE slots.

    ``h`` is ``(n, m)``, ``z`` is ``(n, N, m)`` unit noise. Returns
    ``h_hat`` of shape ``(n, N-1, m)`` and ``V`` of shape ``(n, N-1)``.
    """
    n, N, m = z.shape
    k = np.arange(1, N)[None, :, None]
    S = np.cumsum(z[:, :N - 1, :], axis=1)
    h_hat = h[:, None, :] + (math.sqrt(m * noise_var) / k) * S
    V = np.sum(h_hat.real ** 2 + h_hat.imag ** 2, axis=2)
    return h_hat, V


def fixed_kappa_energies(h, h_hat, V, N):
    """Realized unit-power energy for every stopping slot ``kappa = 0..N-1``.

    ``kappa = 0`` is isotropic transmission over all ``m N`` symbols; later
    slots use the matched beamformer over the remaining ``m (N - kappa)``.
    """
    n, m = h.shape
    E = np.empty((n, N))
    E[:, 0] = N * np.sum(np.abs(h) ** 2, axis=1)
    proj = np.abs(np.einsum("nkm,nm->nk", h_hat.conj(), h)) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(V > 0, proj / V, E[:, :1] / N / m)
    E[:, 1:] = m * (N - np.arange(1, N))[None, :] * gain
    return E


def stopping_slots(policy, V):
    """First slot at which ``policy`` stops for each row of ``V``."""
    n = V.shape[0]
    N = policy.N
    stop = np.empty((n, N), dtype=bool)
    stop[:, 0] = bool(policy.stop_mask(0, 0.0))
    for k in range(1, N):
        stop[:, k] = policy.stop_mask(k, V[:, k - 1])
    stop[:, N - 1] = True
    return np.argmax(stop, axis=1)


@dataclass
class PolicyRun:
    kappa: np.ndarray
    v_stop: np.ndarray
    energy: np.ndarray

    @property
    def mean(self):
        return float(self.energy.mean())

    @property
    def se(self):
        return float(self.energy.std(ddof=1) / math.sqrt(len(self.energy)))


def draw_block(rng, n, N, m):
    h = complex_normal(rng, (n, m))
    z = complex_normal(rng, (n, N, m))
    return h, z


def _check_policy(policy, model, cfg):
    if (policy.m, policy.N) != (cfg.m, cfg.N):
        raise ConfigError("policy was solved for a different frame layout")
    nv = effective_noise_var(model)
    if not math.isclose(nv, policy.noise_var, rel_tol=1e-12):
        raise ConfigError(f"policy noise variance {policy.noise_var} != model's {nv}")
    return nv


def simulate_policy(policy, model, cfg, n_frames=1, seed=0, block_size=DEFAULT_BLOCK,
                    return_fixed=False):
    """Monte Carlo of the stopping policy with unit transmit power.

    Returns a ``PolicyRun``; with ``return_fixed`` also the ``(n, N)``
    energies of every fixed stopping slot on the same draws.
    """
    nv = _check_policy(policy, model, cfg)
    gain = channel_gain(model)
    runs, fixed = [], []
    for b, n in iter_blocks(n_frames, block_size):
        h, z = draw_block(block_generator(seed, b), n, cfg.N, cfg.m)
        h_hat, V = estimate_powers(h, z, nv)
        E = gain * fixed_kappa_energies(h, h_hat, V, cfg.N)
        kappa = stopping_slots(policy, V)
        Vp = np.concatenate([np.zeros((n, 1)), V], axis=1)
        rows = np.arange(n)
        runs.append((kappa, Vp[rows, kappa], E[rows, kappa]))
        if return_fixed:
            fixed.append(E)
    kappa, v_stop, energy = (np.concatenate(x) for x in zip(*runs))
    run = PolicyRun(kappa, v_stop, energy)
    if return_fixed:
        return run, np.concatenate(fixed)
    return run


def policy_gap_monte_carlo(r, m, noise_var, n_trials, seed=0):
    """Per-trial energy of CE at ``r+1`` then WPT, minus WPT right after ``r``.

    Each policy is credited with one slot (``m`` symbols) of matched
    beamforming. Returns ``(mean, standard error)``.
    """
    rng = np.random.default_rng(seed)
    h = complex_normal(rng, (n_trials, m))
    z = complex_normal(rng, (n_trials, r + 1, m))
    S = np.cumsum(z, axis=1)
    sc = math.sqrt(m * noise_var)
    h_r = h + sc / r * S[:, r - 1]
    h_r1 = h + sc / (r + 1) * S[:, r]

    def energy(hh):
        return m * np.abs(np.sum(hh.conj() * h, axis=1)) ** 2 / np.sum(np.abs(hh) ** 2, axis=1)

    d = energy(h_r1) - energy(h_r)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n_trials))
