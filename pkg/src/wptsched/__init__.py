"""Scheduling of channel estimation and wireless power transfer over MISO links."""

from .channel import ChannelModel, FrameConfig, make_exponential_covariance, sample_channel
from .dp_policy import PolicyTable, ValueGrid, decide, simulate_policy, solve_bellman
from .errors import ConfigError, NumericalError
from .fixed_length import energy_of_tau, g_factor, optimal_antennas, optimal_tau
from .harness import SimConfig, compare_schemes, run_scheme
from .kernels import BACKEND as KERNEL_BACKEND
from .power_alloc import (allocate_cpa, allocate_lcpa, allocate_lpa, brute_force_lp,
                          stopping_distribution)

__version__ = "0.1.0"

__all__ = [
    "ChannelModel", "FrameConfig", "make_exponential_covariance", "sample_channel",
    "PolicyTable", "ValueGrid", "decide", "simulate_policy", "solve_bellman",
    "ConfigError", "NumericalError",
    "energy_of_tau", "g_factor", "optimal_antennas", "optimal_tau",
    "SimConfig", "compare_schemes", "run_scheme", "KERNEL_BACKEND",
    "allocate_cpa", "allocate_lcpa", "allocate_lpa", "brute_force_lp", "stopping_distribution",
]
