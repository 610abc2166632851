import json
import math

import numpy as np
import pytest

from wptsched.beamforming import expected_next_stop_energy, expected_stop_energy, stop_energy_coeffs
from wptsched.channel import ChannelModel, FrameConfig, make_exponential_covariance
from wptsched.dp_policy import (CONTINUE, STOP, GridCoverageError, PolicyTable, coverage_quantile,
                                decide, effective_noise_var, simulate_policy, solve_bellman,
                                threshold_closed_form_last_two)
from wptsched.errors import ConfigError, NumericalError


def test_baseline_structure(baseline_policy):
    cfg, _, grid, policy = baseline_policy
    assert policy.N == 42 and grid.J.shape == (42, grid.M + 1)
    counts = policy.counts()
    assert counts[0] in (0, 1)
    assert all(c == 1 for c in counts[1:])
    lam = policy.single_thresholds()
    assert np.all(np.diff(lam[1:]) <= 1e-9)
    assert lam[1] > grid.v[-1]          # the first threshold lies beyond the grid
    assert lam[-1] == 0.0
    # the value function dominates stopping and equals it on the stop set
    for k in range(1, cfg.N):
        stop_e = expected_stop_energy(grid.v, k, cfg.N, cfg.m, 1.0)
        assert np.all(grid.J[k] >= stop_e - 1e-9)
        on = policy.stop_mask(k, grid.v)
        np.testing.assert_allclose(grid.J[k][on], stop_e[on])
    assert grid.J[0, 0] == pytest.approx(255.17, abs=0.05)


def test_thresholds_are_sign_changes(baseline_policy):
    cfg, model, grid, policy = baseline_policy
    for k in range(1, cfg.N - 1):
        lam = policy.thresholds[k][0]
        if lam <= 0 or lam >= grid.v[-1]:
            continue
        d = expected_stop_energy(grid.v, k, cfg.N, cfg.m, 1.0) - grid.Jbar[k]
        assert np.all(d[grid.v < lam - grid.delta] < 1e-9)
        assert np.all(d[grid.v > lam + grid.delta] > -1e-9)


def test_grid_refinement(baseline_policy):
    cfg, model, grid, policy = baseline_policy
    coarse, cpol = solve_bellman(cfg, model, delta=2 * grid.delta, M=grid.M // 2)
    rel = np.abs(coarse.J[:, 0] - grid.J[:, 0]) / grid.J[:, 0]
    assert rel.max() < 0.01
    a, b = policy.single_thresholds()[1:-1], cpol.single_thresholds()[1:-1]
    big = a > 1
    np.testing.assert_allclose(b[big], a[big], rtol=0.02)


@pytest.mark.parametrize("T, m, nv", [(126, 3, 1.0), (12, 3, 0.1), (8, 2, 0.2), (30, 3, 3.0)])
def test_last_two_thresholds_closed_form(T, m, nv):
    cfg = FrameConfig.from_T(T, m)
    model = ChannelModel.uncorrelated(m, nv)
    last, lam = threshold_closed_form_last_two(cfg, model)
    assert last == 0.0
    _, policy = solve_bellman(cfg, model, M=400)
    assert policy.thresholds[-1] == [0.0]
    assert policy.thresholds[-2] == [pytest.approx(lam, abs=1e-8)]
    # the closed form is the root of the stop-minus-lookahead line
    k, N = cfg.N - 2, cfg.N
    c = stop_energy_coeffs(k, N, m, nv)
    s = m * nv
    num = c.A * c.B * c.G - c.D * c.F
    den = c.D * k * k * (k + 1 + s) - c.A * c.G * c.C
    root = num / den
    gap = expected_stop_energy(root, k, N, m, nv) - expected_next_stop_energy(root, k, N, m, nv)
    assert abs(gap) < 1e-9 * c.A
    if root <= 0:
        v = np.linspace(0, 50, 11)
        assert np.all(expected_stop_energy(v, k, N, m, nv)
                      >= expected_next_stop_energy(v, k, N, m, nv))


def test_single_antenna_stops_at_once():
    cfg = FrameConfig.from_T(20, 1)
    _, policy = solve_bellman(cfg, ChannelModel.uncorrelated(1, 1.0), M=200)
    assert policy.thresholds[0] == [0.0]
    assert decide(policy, 0.0, 0) == STOP


def test_single_slot_frame():
    cfg = FrameConfig.from_T(3, 3)
    grid, policy = solve_bellman(cfg, ChannelModel.uncorrelated(3, 1.0), M=50)
    assert policy.thresholds == [[0.0]]
    assert grid.J[0, 0] == pytest.approx(3.0)


def test_pathloss_scales_noise():
    model = ChannelModel.uncorrelated(3, 1.0, pathloss=0.5)
    assert effective_noise_var(model) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        effective_noise_var(ChannelModel(2, make_exponential_covariance(2, 0.5)))
    with pytest.raises(ConfigError):
        effective_noise_var(ChannelModel.uncorrelated(2, 1.0, pathloss=0.0))


def test_coverage_error():
    cfg = FrameConfig.from_T(12, 3)
    model = ChannelModel.uncorrelated(3, 1.0)
    with pytest.raises(GridCoverageError) as info:
        solve_bellman(cfg, model, delta=0.01, M=10)
    assert info.value.required_M == math.ceil(coverage_quantile(3, 1.0) / 0.01)
    grid, _ = solve_bellman(cfg, model, delta=0.1)
    assert grid.delta * grid.M >= coverage_quantile(3, 1.0)


def test_decide_boundaries():
    p = PolicyTable(3, 3, 1.0, [[], [2.0, 5.0], [0.0]])
    assert decide(p, 0.0, 0) == CONTINUE
    assert decide(p, 1.999999, 1) == CONTINUE
    assert decide(p, 2.0, 1) == STOP
    assert decide(p, 4.9, 1) == STOP
    assert decide(p, 5.0, 1) == CONTINUE
    assert decide(p, 0.0, 2) == STOP
    assert decide(p, 0.0, 1, prev_decision=STOP) == STOP
    with pytest.raises(ConfigError):
        decide(p, 1.0, 3)
    with pytest.raises(NumericalError):
        p.single_thresholds()


@pytest.mark.parametrize("bad", [
    [[], [0.0]],                 # wrong length
    [[], [3.0, 1.0], [0.0]],     # decreasing
    [[], [-1.0], [0.0]],         # negative
    [[], [1.0], [2.0]],          # last slot must stop
])
def test_policy_table_validation(bad):
    with pytest.raises(ConfigError):
        PolicyTable(3, 3, 1.0, bad)


def test_policy_json_round_trip(tmp_path, baseline_policy):
    _, _, _, policy = baseline_policy
    path = tmp_path / "policy.json"
    policy.save(path)
    back = PolicyTable.load(path)
    assert back.thresholds == policy.thresholds
    assert (back.m, back.N, back.noise_var, back.delta, back.M) == \
        (policy.m, policy.N, policy.noise_var, policy.delta, policy.M)
    d = json.loads(path.read_text())
    d["version"] = 99
    with pytest.raises(ConfigError):
        PolicyTable.from_dict(d)


def test_simulation_is_deterministic(baseline_policy):
    cfg, model, _, policy = baseline_policy
    a = simulate_policy(policy, model, cfg, n_frames=5000, seed=4)
    b = simulate_policy(policy, model, cfg, n_frames=5000, seed=4)
    c = simulate_policy(policy, model, cfg, n_frames=5000, seed=5)
    np.testing.assert_array_equal(a.energy, b.energy)
    assert not np.array_equal(a.energy, c.energy)
    assert np.all(a.kappa >= 1) and np.all(a.kappa <= cfg.N - 1)
    with pytest.raises(ConfigError):
        simulate_policy(policy, ChannelModel.uncorrelated(3, 2.0), cfg, n_frames=10)


def test_value_matches_simulation(baseline_policy):
    cfg, model, grid, policy = baseline_policy
    run = simulate_policy(policy, model, cfg, n_frames=40_000, seed=8)
    assert abs(run.mean - grid.J[0, 0]) < 4 * run.se
