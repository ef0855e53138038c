import numpy as np
import pytest

from boussinesq_ci.spectral_core import TorusGrid


@pytest.fixture(scope="session")
def g16():
    return TorusGrid(16)


@pytest.fixture(scope="session")
def g32():
    return TorusGrid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_glued():
    """Glued stage built from one random exact trajectory at n = 32 (i_max = 2)."""
    from boussinesq_ci.boussinesq_solver import random_state, solve_local
    from boussinesq_ci.convex_integration import (ExactFlowStage, TrajectoryExact, build_glued,
                                                  mollify_stage)
    g = TorusGrid(32)
    tau, Tt = 0.02, 0.05
    dt = tau / 20
    init = random_state(g, seed=1, c1=0.1, theta_amp=0.1, t=2 * Tt - tau)
    traj = solve_local(init, 3 * Tt + tau, dt)
    base = ExactFlowStage(TrajectoryExact(traj))
    ms = mollify_stage(base, 0.08)
    return build_glued(ms, tau, Tt, dt)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
