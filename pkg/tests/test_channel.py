import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from conftest import random_pd
from wptsched.channel import (ChannelModel, ChannelModelError, FrameConfig, GaussianPosterior,
                              complex_normal, conditional_channel_stats, conditional_correlation,
                              estimate_power_mean, estimate_power_pdf, estimate_transition_stats,
                              integrate_power_pdf, make_exponential_covariance, sample_channel)
from wptsched.dp_policy import estimate_powers


def test_exponential_covariance():
    np.testing.assert_array_equal(make_exponential_covariance(3, 0.0), np.eye(3))
    np.testing.assert_allclose(make_exponential_covariance(2, 0.8), [[1, 0.8], [0.8, 1]])
    assert np.linalg.eigvalsh(make_exponential_covariance(3, 0.5)).min() > 0
    R = make_exponential_covariance(4, 0.5)
    assert R[0, 3] == pytest.approx(0.125)
    with pytest.raises(ChannelModelError):
        make_exponential_covariance(3, 1.0)


@pytest.mark.parametrize("R, msg", [
    (np.array([[1, 0.5], [0.1, 1]]), "Hermitian"),
    (np.array([[1, 2], [2, 1]]), "positive definite"),
    (np.eye(3), "must be 2x2"),
])
def test_channel_model_rejects(R, msg):
    with pytest.raises(ChannelModelError, match=msg):
        ChannelModel(2, R)


def test_channel_model_misc():
    with pytest.raises(ChannelModelError):
        ChannelModel.uncorrelated(2, noise_var=0.0)
    with pytest.raises(ChannelModelError):
        FrameConfig(125, 42, 3)
    assert FrameConfig.from_T(126, 3).N == 42
    assert ChannelModel.uncorrelated(3).is_uncorrelated
    assert not ChannelModel(2, make_exponential_covariance(2, 0.3)).is_uncorrelated


def test_sample_channel_moments():
    rng = np.random.default_rng(1)
    h = sample_channel(ChannelModel.uncorrelated(3), rng, 10 ** 6)
    S = h.T @ h.conj() / len(h)
    assert np.linalg.norm(S - np.eye(3)) < 0.01 * math.sqrt(3)
    h = sample_channel(ChannelModel(2, make_exponential_covariance(2, 0.8)), rng, 10 ** 6)
    S = h.T @ h.conj() / len(h)
    assert abs(S[0, 1] - 0.8) < 0.008
    assert np.all(sample_channel(ChannelModel.uncorrelated(3, pathloss=0.0), rng, 5) == 0)


def test_posterior_limits_and_examples():
    post = conditional_channel_stats(np.array([2.0, 0.0]), np.eye(2), 1e-12 * np.eye(2))
    np.testing.assert_allclose(post.mean, [2, 0], atol=1e-11)
    assert np.abs(post.covariance).max() < 1e-11
    post = conditional_channel_stats(np.array([2.0, 0.0]), np.eye(2), np.eye(2))
    Rc = conditional_correlation(post)
    np.testing.assert_allclose(np.diag(Rc).real, [1.5, 0.5])
    mu = np.array([1.0, 0.0])
    np.testing.assert_allclose(conditional_correlation(GaussianPosterior(mu, np.zeros((2, 2)))),
                               np.outer(mu, mu))
    with pytest.raises(ChannelModelError):
        conditional_channel_stats(np.ones(2), np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ChannelModelError):
        conditional_channel_stats(np.ones(3), np.eye(2), np.eye(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), m=st.integers(1, 6))
def test_posterior_matches_textbook_form(seed, m):
    rng = np.random.default_rng(seed)
    R, Re = random_pd(rng, m), random_pd(rng, m)
    h = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    post = conditional_channel_stats(h, R, Re)
    inv = np.linalg.inv
    np.testing.assert_allclose(post.mean, inv(Re @ inv(R) + np.eye(m)) @ h, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(post.covariance, inv(inv(R) + inv(Re)), rtol=1e-9, atol=1e-9)


def test_posterior_by_monte_carlo():
    # h ~ CN(0, R), h_hat = h + e, e ~ CN(0, Re); check E[h | h_hat] by regression
    rng = np.random.default_rng(7)
    R = make_exponential_covariance(2, 0.6)
    Re = np.diag([0.5, 1.5])
    n = 400_000
    h = complex_normal(rng, (n, 2)) @ np.linalg.cholesky(R).T
    hh = h + complex_normal(rng, (n, 2)) @ np.linalg.cholesky(Re).T
    B = np.linalg.lstsq(hh, h, rcond=None)[0].T
    post = conditional_channel_stats(np.array([1.0, 0.0]), R, Re)
    np.testing.assert_allclose(B[:, 0], post.mean, atol=0.01)


def test_transition_stats_examples():
    a, v = estimate_transition_stats(1, 3, 1.0)
    assert (a, v) == (pytest.approx(0.625), pytest.approx(0.9375))
    a, v = estimate_transition_stats(10 ** 6, 3, 1.0)
    assert abs(a - 1) < 1e-5 and v < 1e-5
    a, v = estimate_transition_stats(3, 3, 1e-12)
    assert abs(a - 1) < 1e-9 and v < 1e-9
    assert estimate_power_mean(0.0, 1, 3, 1.0) == pytest.approx(2.8125)
    with pytest.raises(ValueError):
        estimate_transition_stats(0, 3, 1.0)


def test_transition_stats_by_monte_carlo():
    # regress h_hat_{k+1} on h_hat_k through the LS recursion
    rng = np.random.default_rng(3)
    n, m, nv, k = 10 ** 6, 3, 1.0, 1
    h = complex_normal(rng, (n, m))
    z = complex_normal(rng, (n, k + 2, m))
    S = np.cumsum(z, axis=1)
    hk = h + math.sqrt(m * nv) / k * S[:, k - 1]
    hk1 = h + math.sqrt(m * nv) / (k + 1) * S[:, k]
    x, y = hk[:, 0], hk1[:, 0]
    slope = np.vdot(x, y).real / np.vdot(x, x).real
    resid = np.mean(np.abs(y - slope * x) ** 2)
    a, v = estimate_transition_stats(k, m, nv)
    assert slope == pytest.approx(a, rel=0.01)
    assert resid == pytest.approx(v, rel=0.01)


def test_first_slot_marginal_is_gamma():
    v = np.linspace(0.01, 40, 50)
    np.testing.assert_allclose(estimate_power_pdf(v, 0.0, 0, 3, 1.0),
                               stats.gamma.pdf(v, 3, scale=4.0), rtol=1e-12)
    assert integrate_power_pdf(0.0, 0, 2, 0.5) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("k", [1, 3, 10])
@pytest.mark.parametrize("v", [0.0, 2.0, 15.0])
def test_power_pdf_normalized(k, v):
    assert integrate_power_pdf(v, k, 3, 1.0) == pytest.approx(1.0, abs=1e-6)
    mean = integrate_power_pdf(v, k, 3, 1.0, moment=1)
    assert mean == pytest.approx(estimate_power_mean(v, k, 3, 1.0), rel=1e-8)


def test_power_chain_is_markov():
    """Given V_k, the earlier power V_{k-1} carries no information about V_{k+1}."""
    rng = np.random.default_rng(11)
    n, m, nv, N = 400_000, 3, 1.0, 6
    h = complex_normal(rng, (n, m))
    z = complex_normal(rng, (n, N, m))
    _, V = estimate_powers(h, z, nv)
    k = 3
    prev, cur, nxt = V[:, k - 2], V[:, k - 1], V[:, k]
    X = np.column_stack([np.ones(n), cur, prev])
    coef = np.linalg.lstsq(X, nxt, rcond=None)[0]
    _, var = estimate_transition_stats(k, m, nv)
    s = m * nv
    assert coef[0] == pytest.approx(var * m, rel=0.02)
    assert coef[1] == pytest.approx(var * k * k * (k + 1 + s) / (s * (k + s)), rel=0.01)
    assert abs(coef[2]) < 0.01
    # binned conditional mean of V_{k+1} against the analytic law
    edges = np.quantile(cur, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, cur, side="right") - 1, 0, 9)
    for b in range(10):
        sel = idx == b
        pred = estimate_power_mean(cur[sel], k, m, nv).mean()
        se = nxt[sel].std() / math.sqrt(sel.sum())
        assert abs(nxt[sel].mean() - pred) < 4 * se
