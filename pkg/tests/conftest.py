import numpy as np
import pytest

from wptsched.channel import ChannelModel, FrameConfig
from wptsched.dp_policy import solve_bellman


@pytest.fixture(scope="session")
def baseline_policy():
    """Solved stopping policy at T=126, m=3, unit noise (the default frame)."""
    cfg = FrameConfig.from_T(126, 3)
    model = ChannelModel.uncorrelated(3, 1.0)
    grid, policy = solve_bellman(cfg, model)
    return cfg, model, grid, policy


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(rng, m, cond=50.0):
    A = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    Q, _ = np.linalg.qr(A)
    d = np.exp(rng.uniform(0, np.log(cond), m))
    return (Q * d) @ Q.conj().T


# (number, title, passed, seconds, budget, detail) for each acceptance criterion run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, title, ok, secs, budget, detail in sorted(ACCEPTANCE):
        status = "PASS" if ok else "FAIL"
        tr.write_line(f"[{status}] {num:>2}. {title} ({secs:.2f}s / {budget:g}s) {detail}")
