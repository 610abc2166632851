"""Monte Carlo comparison of WPT schemes on common random numbers.

Schemes
-------
MRT    perfect CSI, transmit power allocated on ``||h||^2`` under the same
       cap and budget as the other power-allocated schemes
FwoPA  fixed preamble of optimal length, constant power ``P0``
DYN    threshold stopping policy, constant power ``P0``
LCPA   stopping policy, power by (stopping slot, estimate power)
LPA    stopping policy, power by stopping slot
CPA    fixed preamble, power by estimate power

Energies are per frame in units of ``P0`` times one symbol period.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import math

import numpy as np
from scipy import stats

from .channel import ChannelModel, FrameConfig, covariance_factor, make_exponential_covariance
from .dp_policy import (channel_gain, draw_block, effective_noise_var, estimate_powers,
                        fixed_kappa_energies, solve_bellman, stopping_slots)
from .errors import ConfigError
from .estimation import KINDS, LS
from .fixed_length import fixed_length_energies, optimal_tau, optimal_tau_numeric
from .power_alloc import (allocate_cpa, allocate_lcpa, allocate_lpa, fixed_slot_distribution,
                          stopping_distribution)
from .rng import DEFAULT_BLOCK, block_generator, iter_blocks

MRT, FWOPA, DYN, LCPA, LPA, CPA = "MRT", "FwoPA", "DYN", "LCPA", "LPA", "CPA"
SCHEMES = (MRT, FWOPA, DYN, LCPA, LPA, CPA)
POLICY_SCHEMES = (DYN, LCPA, LPA)


@dataclass
class PhysicalUnits:
    """Link budget in physical units.

    The normalized noise variance is the noise power over the bandwidth
    divided by ``p0_watts``; the channel gain is ``10^(-ref_loss_db/10) *
    distance_m^(-exponent)``.
    """

    noise_dbm_per_hz: float = -63.0
    bandwidth_hz: float = 1.0
    p0_watts: float = 1.0
    distance_m: float = 1.0
    exponent: float = 2.0
    ref_loss_db: float = 20.0

    @property
    def noise_var(self):
        return 10 ** (self.noise_dbm_per_hz / 10) * 1e-3 * self.bandwidth_hz / self.p0_watts

    @property
    def pathloss(self):
        return 10 ** (-self.ref_loss_db / 10) * self.distance_m ** (-self.exponent)


@dataclass
class SimConfig:
    T: int = 126
    m: int = 3
    q: int | None = None
    xi: float = 0.0
    noise_var: float = 1.0
    pathloss: float = 1.0
    estimator: str = LS
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    P0: float = 1.0
    P1_ratio: float = 8.0
    P2: float | None = None
    n_frames: int = 100_000
    seed: int = 0
    grid_M: int = 2000
    n_bins: int = 400
    tau_samples: int = 10_000
    block_size: int = DEFAULT_BLOCK
    threads: int = 1
    physical: PhysicalUnits | None = None

    def __post_init__(self):
        if isinstance(self.physical, dict):
            try:
                self.physical = PhysicalUnits(**self.physical)
            except TypeError as exc:
                raise ConfigError(f"bad physical-units block: {exc}") from None
        if self.physical is not None:
            self.noise_var = self.physical.noise_var
            self.pathloss = self.physical.pathloss
        if self.q is None:
            self.q = self.m
        if self.m < 1 or self.T < 1 or self.T % self.m:
            raise ConfigError(f"T={self.T} must be a positive multiple of m={self.m}")
        if not 1 <= self.q <= self.m:
            raise ConfigError(f"q must lie in [1, m], got {self.q}")
        if self.P1_ratio < 1:
            raise ConfigError("P1 must be at least P0")
        if self.P0 <= 0 or self.noise_var <= 0 or self.pathloss <= 0:
            raise ConfigError("P0, noise_var and pathloss must be positive")
        if self.estimator not in KINDS:
            raise ConfigError(f"estimator must be one of {KINDS}")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if self.n_frames < 2:
            raise ConfigError("need at least two frames")

    @property
    def N(self):
        return self.T // self.m

    @property
    def P1(self):
        return self.P1_ratio * self.P0

    @property
    def frame(self):
        return FrameConfig.from_T(self.T, self.m)

    def model(self):
        return ChannelModel(self.m, make_exponential_covariance(self.m, self.xi),
                            self.noise_var, self.pathloss)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class SchemeReport:
    scheme: str
    mean: float
    se: float
    spend: float
    spend_se: float
    n_frames: int
    kappa_hist: np.ndarray | None = None
    tau_curve: object = None

    def row(self):
        return {"scheme": self.scheme, "mean_energy": self.mean, "se": self.se,
                "mean_spend": self.spend, "spend_se": self.spend_se, "n_frames": self.n_frames}


@dataclass
class Artifacts:
    """Everything the per-frame simulation needs, built once per run."""

    cfg: SimConfig
    tau_star: int
    P2: float
    policy: object = None
    plans: dict = field(default_factory=dict)
    mrt_threshold: float = 0.0
    mrt_power: float = 0.0


def _dynamic_ok(cfg, model):
    return cfg.estimator == LS and model.is_uncorrelated and cfg.q == cfg.m


def optimal_fixed_tau(cfg, model=None):
    model = cfg.model() if model is None else model
    if cfg.estimator == LS and model.is_uncorrelated:
        return optimal_tau(cfg.T, cfg.m, cfg.q, effective_noise_var(model), multiple_of_m=True)[0]
    sweep = optimal_tau_numeric(model, cfg.estimator, cfg.q, cfg.T,
                                n_samples=max(cfg.tau_samples, 10_000), seed=cfg.seed)
    return sweep.tau_star


def build_artifacts(cfg, schemes=None):
    """Stopping policy, optimal fixed preamble and allocation plans."""
    schemes = list(cfg.schemes if schemes is None else schemes)
    model = cfg.model()
    tau = optimal_fixed_tau(cfg, model)
    P2 = cfg.P2 if cfg.P2 is not None else (cfg.T - tau) * cfg.P0
    art = Artifacts(cfg, int(tau), float(P2))
    needs_dp = [s for s in schemes if s in POLICY_SCHEMES or s == CPA]
    if needs_dp and not _dynamic_ok(cfg, model):
        raise ConfigError(f"schemes {needs_dp} need LS estimation, an uncorrelated channel "
                          "and full feedback (q = m)")
    frame = cfg.frame
    if any(s in POLICY_SCHEMES for s in schemes):
        _, art.policy = solve_bellman(frame, model, M=cfg.grid_M)
        if LCPA in schemes or LPA in schemes:
            dist = stopping_distribution(art.policy, model, frame, n_bins=cfg.n_bins)
            if LCPA in schemes:
                art.plans[LCPA] = allocate_lcpa(dist, cfg.P1, P2)
            if LPA in schemes:
                art.plans[LPA] = allocate_lpa(dist, cfg.P1, P2)
    if CPA in schemes:
        nv = effective_noise_var(model)
        d = fixed_slot_distribution(tau // cfg.m, cfg.m, cfg.N, nv, n_bins=cfg.n_bins)
        art.plans[CPA] = allocate_cpa(d, cfg.P1, P2)
    if MRT in schemes:
        # budget-limited cap on the frames with the strongest channels
        frac = P2 / (cfg.T * cfg.P1)
        scale = float(np.real(np.trace(model.covariance))) / cfg.m
        if frac >= 1:
            art.mrt_threshold, art.mrt_power = 0.0, cfg.P1
        else:
            art.mrt_threshold = float(stats.gamma.isf(frac, cfg.m, scale=scale)) \
                if model.is_uncorrelated else _mrt_quantile(model, frac, cfg.seed)
            art.mrt_power = cfg.P1
    return art


def _mrt_quantile(model, frac, seed, n=1_000_000):
    rng = block_generator(seed, 2 ** 31 - 1)
    L = covariance_factor(model.covariance)
    w = (rng.standard_normal((n, model.m)) + 1j * rng.standard_normal((n, model.m))) / math.sqrt(2)
    g = np.sum(np.abs(w @ L.T) ** 2, axis=1)
    return float(np.quantile(g, 1 - frac))


def _simulate_block(art, schemes, b, n):
    cfg = art.cfg
    m, N = cfg.m, cfg.N
    model = cfg.model()
    h_w, z = draw_block(block_generator(cfg.seed, b), n, N, m)
    L = covariance_factor(model.covariance)
    h = h_w @ L.T
    kstar = art.tau_star // m
    rows = np.arange(n)
    out = {}
    E = V = None
    if _dynamic_ok(cfg, model):
        nv = effective_noise_var(model)
        h_hat, V = estimate_powers(h_w, z, nv)
        E = channel_gain(model) * fixed_kappa_energies(h_w, h_hat, V, N)
        Vp = np.concatenate([np.zeros((n, 1)), V], axis=1)
    cost = m * (N - np.arange(N))
    for s in schemes:
        if s == MRT:
            g = np.sum(np.abs(h) ** 2, axis=1)
            p = np.where(g >= art.mrt_threshold, art.mrt_power, 0.0)
            out[s] = (cfg.T * p * g, cfg.T * p, None)
        elif s == FWOPA:
            if E is not None:
                e = E[:, kstar]
            else:
                noise = z[:, :kstar, :].reshape(n, kstar * m)
                _, e = fixed_length_energies(model, cfg.estimator, cfg.q, cfg.T, kstar, h, noise)
            out[s] = (cfg.P0 * e, np.full(n, cfg.P0 * (cfg.T - art.tau_star)), None)
        elif s == CPA:
            p = art.plans[CPA].lookup(kstar, Vp[:, kstar])
            out[s] = (p * E[:, kstar], p * cost[kstar], None)
        else:
            kappa = stopping_slots(art.policy, V)
            if s == DYN:
                p = np.full(n, cfg.P0)
            else:
                p = art.plans[s].lookup(kappa, Vp[rows, kappa])
            out[s] = (p * E[rows, kappa], p * cost[kappa], kappa)
    return out


def _reduce(parts, schemes, N):
    reports = {}
    for s in schemes:
        e = np.concatenate([p[s][0] for p in parts])
        c = np.concatenate([p[s][1] for p in parts])
        n = len(e)
        hist = None
        if parts[0][s][2] is not None:
            hist = np.bincount(np.concatenate([p[s][2] for p in parts]), minlength=N)
        reports[s] = SchemeReport(s, float(e.mean()), float(e.std(ddof=1) / math.sqrt(n)),
                                  float(c.mean()), float(c.std(ddof=1) / math.sqrt(n)), n, hist)
    return reports


def simulate(art, schemes=None, return_samples=False):
    """Run all blocks (optionally in worker processes) and reduce."""
    cfg = art.cfg
    schemes = list(cfg.schemes if schemes is None else schemes)
    blocks = list(iter_blocks(cfg.n_frames, cfg.block_size))
    if cfg.threads > 1:
        with ProcessPoolExecutor(cfg.threads) as ex:
            parts = list(ex.map(_simulate_block, [art] * len(blocks), [schemes] * len(blocks),
                                *zip(*blocks)))
    else:
        parts = [_simulate_block(art, schemes, b, n) for b, n in blocks]
    reports = _reduce(parts, schemes, cfg.N)
    if return_samples:
        samples = {s: np.concatenate([p[s][0] for p in parts]) for s in schemes}
        return reports, samples
    return reports


def compare_schemes(cfg, return_samples=False):
    """Reports for every configured scheme on one set of channel draws."""
    art = build_artifacts(cfg)
    return simulate(art, return_samples=return_samples)


def run_scheme(scheme, cfg, artifacts=None):
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    art = build_artifacts(cfg, [scheme]) if artifacts is None else artifacts
    if scheme in (LCPA, LPA, CPA) and scheme not in art.plans:
        raise ConfigError(f"{scheme} needs an allocation plan; build artifacts with it")
    if scheme in POLICY_SCHEMES and art.policy is None:
        raise ConfigError(f"{scheme} needs a stopping policy; build artifacts with it")
    rep = simulate(art, [scheme])[scheme]
    if scheme == FWOPA:
        rep.tau_curve = tau_curve(cfg)
    return rep


def tau_curve(cfg, estimator=None):
    """Fixed-preamble energy (unit power) for every ``tau = k m``."""
    return optimal_tau_numeric(cfg.model(), estimator or cfg.estimator, cfg.q, cfg.T,
                               n_samples=max(cfg.tau_samples, 10_000), seed=cfg.seed)
