"""Joint law of (stopping slot, estimate power) and greedy power allocation.

Power allocation is a fractional knapsack: each (slot, power-bin) cell has
probability ``mass``, energy cost ``m (N - kappa)`` per unit power and
efficiency ``eta = B + C v``. Filling cells at the cap ``P1`` in decreasing
order of ``eta`` until the average budget ``P2`` is used up is optimal.
"""

from dataclasses import dataclass
import csv
from itertools import product
import math

import numpy as np
from scipy import optimize, special

from . import kernels
from .beamforming import stop_energy_coeffs
from .channel import marginal_power_scale
from .dp_policy import (check_coverage, coverage_quantile, effective_noise_var,
                        simulate_policy)
from .errors import ConfigError

LCPA = "LCPA"
LPA = "LPA"
CPA = "CPA"
FORWARD = "forward"
MONTE_CARLO = "monte-carlo"


@dataclass
class StoppingDistribution:
    """``mass[kappa, b]``: probability of stopping at ``kappa`` with ``V`` in bin ``b``.

    Bins are ``[edges[b], edges[b+1])``; the last bin is open to ``inf``.
    """

    edges: np.ndarray
    mass: np.ndarray
    method: str
    m: int
    N: int
    noise_var: float

    @property
    def n_bins(self):
        return len(self.edges) - 1

    @property
    def centers(self):
        c = 0.5 * (self.edges[:-1] + self.edges[1:])
        if np.isinf(self.edges[-1]):
            c[-1] = self.edges[-2] + 0.5 * (self.edges[-2] - self.edges[-3])
        return c

    @property
    def slot_probabilities(self):
        return self.mass.sum(axis=1)

    def bin_index(self, v):
        idx = np.searchsorted(self.edges, np.asarray(v, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def coarsen(self, factor):
        """Merge groups of ``factor`` adjacent bins (the open bin stays last)."""
        nb = self.n_bins
        groups = np.arange(nb) // factor
        mass = np.zeros((self.N, groups[-1] + 1))
        np.add.at(mass.T, groups, self.mass.T)
        edges = np.append(self.edges[:-1][::factor], self.edges[-1])
        return StoppingDistribution(edges, mass, self.method, self.m, self.N, self.noise_var)


def make_edges(v_max, n_bins):
    e = np.linspace(0.0, v_max, n_bins)
    return np.append(e, np.inf)


def _bin_transition(k, m, nv, centers, edges, nodes_per_bin=8):
    """Row-stochastic ``T[a, b] = P(V_{k+1} in bin b | V_k = centers[a])``."""
    x, w = np.polynomial.legendre.leggauss(nodes_per_bin)
    lo, hi = edges[:-2], edges[1:-1]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    dens = kernels.transition_density(centers, nodes.ravel(), k, m, nv)
    P = (dens * weights.ravel()).reshape(len(centers), len(lo), nodes_per_bin).sum(axis=2)
    P = np.clip(P, 0.0, None)
    tail = 1.0 - P.sum(axis=1)
    over = tail < 0
    P[over] /= P[over].sum(axis=1, keepdims=True)
    return np.concatenate([P, np.maximum(tail, 0.0)[:, None]], axis=1)


def stopping_distribution(policy, model, cfg, method=FORWARD, n_bins=400, v_max=None,
                          n_frames=100_000, seed=0):
    """Distribution of the stopping slot and stopping estimate power.

    ``forward`` pushes bin masses through the continuation regions with a
    discretized transition kernel (stop membership decided at bin centres);
    ``monte-carlo`` histograms ``simulate_policy`` output on the same bins.
    """
    m, N = cfg.m, cfg.N
    nv = effective_noise_var(model)
    if v_max is None:
        v_max = coverage_quantile(m, nv)
    check_coverage(v_max / n_bins, n_bins, m, nv)
    edges = make_edges(v_max, n_bins)
    nb = n_bins
    mass = np.zeros((N, nb))
    if method == MONTE_CARLO:
        run = simulate_policy(policy, model, cfg, n_frames, seed)
        dist = StoppingDistribution(edges, mass, method, m, N, nv)
        np.add.at(mass, (run.kappa, dist.bin_index(run.v_stop)), 1.0 / n_frames)
        return dist
    if method != FORWARD:
        raise ConfigError(f"unknown method {method!r}")
    dist = StoppingDistribution(edges, mass, method, m, N, nv)
    if policy.stop_mask(0, 0.0):
        mass[0, 0] = 1.0
        return dist
    centers = dist.centers
    scale = marginal_power_scale(1, m, nv)
    cdf = special.gammainc(m, edges[:-1] / scale)
    p = np.diff(np.append(cdf, 1.0))
    for k in range(1, N):
        if k == N - 1:
            mass[k] = p
            break
        frac, src = _stop_split(policy.thresholds[k], edges, centers)
        mass[k] = p * frac
        cont = p * (1.0 - frac)
        live = cont > 0
        if not live.any():
            break
        T = _bin_transition(k, m, nv, src[live], edges)
        p = cont[live] @ T
    return dist


def _stop_split(thresholds, edges, centers):
    """Fraction of each bin inside the stop set, and the centre of the rest.

    Mass is taken as uniform within a finite bin; the open last bin is
    classified by its representative point.
    """
    lam = list(thresholds)
    if len(lam) % 2:
        lam.append(np.inf)
    starts, ends = np.array(lam[0::2]), np.array(lam[1::2])
    lo, hi = edges[:-2], edges[1:-1]
    width = hi - lo
    stop_len = np.zeros_like(lo)
    # centre of the continue part = (total first moment - stop moment) / continue length
    stop_mom = np.zeros_like(lo)
    for a, b in zip(starts, ends):
        x0 = np.clip(a, lo, hi)
        x1 = np.clip(b, lo, hi)
        seg = x1 - x0
        stop_len += seg
        stop_mom += 0.5 * (x1 * x1 - x0 * x0)
    frac = np.append(stop_len / width, 0.0)
    cont_len = width - stop_len
    with np.errstate(invalid="ignore", divide="ignore"):
        src = np.where(cont_len > 0, (0.5 * (hi * hi - lo * lo) - stop_mom) / cont_len,
                       centers[:-1])
    src = np.append(src, centers[-1])
    last = np.searchsorted(np.asarray(thresholds), centers[-1], side="right") % 2 == 1
    frac[-1] = 1.0 if last else 0.0
    return np.clip(frac, 0.0, 1.0), src


def tv_distance(a, b, coarsen=1):
    if a.mass.shape != b.mass.shape or not np.array_equal(a.edges, b.edges):
        raise ConfigError("distributions live on different bins")
    if coarsen > 1:
        a, b = a.coarsen(coarsen), b.coarsen(coarsen)
    return 0.5 * float(np.abs(a.mass - b.mass).sum())


def efficiency(v, kappa, N, m, noise_var):
    """Expected harvested energy per unit of WPT energy spent."""
    if not 0 <= kappa < N:
        raise ConfigError(f"kappa must lie in [0, N), got {kappa}")
    c = stop_energy_coeffs(kappa, N, m, noise_var)
    return c.B + c.C * np.asarray(v, dtype=float)


@dataclass
class AllocationPlan:
    """Transmit power per (slot, bin); ``power`` has the distribution's shape.

    LPA plans are constant along bins and CPA plans are zero outside their
    fixed slot.
    """

    mode: str
    edges: np.ndarray
    power: np.ndarray
    P1: float
    P2: float
    objective: float
    spend: float
    m: int
    N: int

    def lookup(self, kappa, v):
        idx = np.searchsorted(self.edges, np.asarray(v, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(self.edges) - 2)
        return self.power[kappa, idx]

    def rows(self, support=None):
        """``(kappa, v_low, v_high, power)`` rows; LPA rows span all ``v``."""
        if self.mode == LPA:
            ks = range(self.N) if support is None else np.flatnonzero(support.any(axis=1))
            for k in ks:
                yield int(k), 0.0, math.inf, float(self.power[k, 0])
            return
        for k, b in zip(*np.nonzero(support if support is not None else self.power > 0)):
            yield int(k), float(self.edges[b]), float(self.edges[b + 1]), float(self.power[k, b])

    def write_csv(self, path, support=None):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["kappa", "v_bin_low", "v_bin_high", "power"])
            for row in self.rows(support):
                wr.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def greedy_fill(mass, cost, eta, P1, P2, order=None):
    """Fractional-knapsack fill; returns per-item power.

    Items are visited by decreasing ``eta`` (ties in index order) and set to
    ``P1`` while the budget lasts; the item that exhausts it gets the
    fraction that meets the budget with equality and the rest get zero.
    """
    if P1 <= 0 or P2 <= 0:
        raise ConfigError("P1 and P2 must be positive")
    mass = np.asarray(mass, dtype=float)
    cost = np.asarray(cost, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if order is None:
        order = np.lexsort((np.arange(len(eta)), -eta))
    x = np.zeros(len(eta))
    left = float(P2)
    for i in order:
        if left <= 0:
            break
        spend = mass[i] * cost[i] * P1
        if spend <= left:
            x[i] = P1
            left -= spend
        else:
            x[i] = left / (mass[i] * cost[i])
            left = 0.0
    return x


def _plan(mode, dist, power, P1, P2, eta):
    m, N = dist.m, dist.N
    cost = m * (N - np.arange(N))[:, None]
    objective = float(np.sum(dist.mass * cost * eta * power))
    spend = float(np.sum(dist.mass * cost * power))
    return AllocationPlan(mode, dist.edges, power, float(P1), float(P2), objective, spend, m, N)


def cell_efficiency(dist):
    return np.stack([efficiency(dist.centers, k, dist.N, dist.m, dist.noise_var)
                     for k in range(dist.N)])


def allocate_lcpa(dist, P1, P2):
    """Power per (stopping slot, estimate-power bin)."""
    eta = cell_efficiency(dist)
    cost = dist.m * (dist.N - np.arange(dist.N))[:, None] * np.ones_like(eta)
    # flattening is row-major, so index order is (smaller kappa, smaller bin)
    x = greedy_fill(dist.mass.ravel(), cost.ravel(), eta.ravel(), P1, P2)
    return _plan(LCPA, dist, x.reshape(eta.shape), P1, P2, eta)


def allocate_lpa(dist, P1, P2):
    """Power per stopping slot, blind to the estimate power."""
    eta = cell_efficiency(dist)
    q = dist.slot_probabilities
    with np.errstate(invalid="ignore", divide="ignore"):
        eta_k = np.where(q > 0, (dist.mass * eta).sum(axis=1) / q, 0.0)
    cost = dist.m * (dist.N - np.arange(dist.N))
    x = greedy_fill(q, cost, eta_k, P1, P2)
    power = np.repeat(x[:, None], dist.n_bins, axis=1)
    return _plan(LPA, dist, power, P1, P2, eta)


def fixed_slot_distribution(kappa, m, N, noise_var, n_bins=400, v_max=None):
    """Law of ``V_kappa`` on the usual bins, placed entirely at slot ``kappa``."""
    if v_max is None:
        v_max = coverage_quantile(m, noise_var)
    edges = make_edges(v_max, n_bins)
    mass = np.zeros((N, n_bins))
    if kappa == 0:
        mass[0, 0] = 1.0
    else:
        scale = marginal_power_scale(kappa, m, noise_var)
        cdf = special.gammainc(m, edges[:-1] / scale)
        mass[kappa] = np.diff(np.append(cdf, 1.0))
    return StoppingDistribution(edges, mass, FORWARD, m, N, noise_var)


def allocate_cpa(dist, P1, P2):
    """Power per estimate-power bin at a single fixed stopping slot."""
    support = np.flatnonzero(dist.slot_probabilities > 0)
    if len(support) != 1:
        raise ConfigError("CPA needs a distribution concentrated on one slot")
    k = int(support[0])
    eta = cell_efficiency(dist)
    cost = np.full(dist.n_bins, dist.m * (dist.N - k))
    # eta is increasing in v at a fixed slot, so this is the v-descending order
    x = greedy_fill(dist.mass[k], cost, eta[k], P1, P2)
    power = np.zeros_like(dist.mass)
    power[k] = x
    return _plan(CPA, dist, power, P1, P2, eta)


def brute_force_lp(bins, P1, P2):
    """Exact optimum of ``max sum p c e x`` s.t. ``sum p c x <= P2``, ``0 <= x <= P1``.

    Up to 12 items every vertex is enumerated (at most one coordinate is
    strictly between the bounds); larger instances go to HiGHS.

    Returns
    -------
    objective : float
    power : ndarray
    """
    bins = np.asarray(bins, dtype=float).reshape(-1, 3)
    p, c, e = bins.T
    w = p * c
    n = len(w)
    if n > 12:
        res = optimize.linprog(-(w * e), A_ub=w[None, :], b_ub=[P2],
                               bounds=[(0, P1)] * n, method="highs")
        if res.status != 0:
            raise ConfigError(f"LP failed: {res.message}")
        return float(w @ (e * res.x)), res.x
    corners = np.array(list(product((0.0, P1), repeat=n))).reshape(-1, n)
    cand = [corners]
    for j in range(n):
        if w[j] <= 0:
            continue
        X = corners.copy()
        X[:, j] = 0.0
        X[:, j] = (P2 - X @ w) / w[j]
        cand.append(X[(X[:, j] >= 0) & (X[:, j] <= P1)])
    X = np.concatenate(cand)
    X = X[X @ w <= P2 * (1 + 1e-12) + 1e-12]
    vals = X @ (w * e)
    i = int(np.argmax(vals))
    return float(vals[i]), X[i]
