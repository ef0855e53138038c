import numpy as np
import pytest

from boussinesq_ci.boussinesq_solver import (CFLError, LifespanError, RelaxedState, SolverAbort,
                                             random_state, relaxed_residual, rhs, shear_flow,
                                             solve_local, step_rk4, trajectory_residuals)
from boussinesq_ci.spectral_core import ScalarField, VectorField, divergence


def test_rhs_on_shear(g16):
    s = shear_flow(g16, 1.5, 0.3)
    dv, dth = rhs(s)
    expect = np.zeros_like(dv.values)
    expect[2] = 1.5 * np.cos(2 * np.pi * g16.coords[0])
    assert np.abs(dv.values - expect).max() < 1e-13
    assert np.abs(dth.values).max() < 1e-13


def test_energy_identity_at_rhs_level(g16):
    s = random_state(g16, seed=3, c1=0.5, theta_amp=0.7)
    dv, dth = rhs(s)
    # d/dt |v|^2/2 = int theta v_3, d/dt |theta|^2/2 = 0
    lhs = float(np.mean(np.sum(s.v.values * dv.values, axis=0)))
    buoy = float(np.mean(s.theta.values * s.v.values[2]))
    assert abs(lhs - buoy) <= 1e-12 * max(1.0, abs(buoy))
    assert abs(float(np.mean(s.theta.values * dth.values))) < 1e-12


def test_step_rk4_shear_is_exact(g16):
    s = shear_flow(g16, 2.0, 0.0)
    for _ in range(10):
        s = step_rk4(s, 0.01)
    ref = shear_flow(g16, 2.0, 0.1)
    assert np.abs(s.v.values - ref.v.values).max() < 1e-13
    assert np.abs(s.theta.values - ref.theta.values).max() < 1e-13


def test_cfl_rejection(g16):
    s = shear_flow(g16, 100.0, 1.0)
    with pytest.raises(CFLError):
        step_rk4(s, 0.1)


def test_lifespan_guard(g16):
    s = random_state(g16, seed=1, c1=1.0)
    with pytest.raises(LifespanError):
        solve_local(s, 1.0, 0.01)


def test_blowup_sentinel(g16):
    # a shear started at v = 0 grows linearly; a low floor reads that as blow-up
    with pytest.raises(SolverAbort) as exc:
        solve_local(shear_flow(g16, 2.0, 0.0), 0.2, 0.01, check_lifespan=False, blowup_floor=1e-3)
    assert "step" in exc.value.payload


def test_time_reversal(g16):
    s = random_state(g16, seed=7, c1=0.1, theta_amp=0.2)
    fwd = solve_local(s, 0.05, 1e-3, check_lifespan=False)
    end = fwd.state(len(fwd) - 1)
    back = solve_local(end, 0.0, 1e-3, check_lifespan=False)
    v0 = fwd.state(0).v.values
    err = np.abs(back.state(len(back) - 1).v.values - v0).max() / np.abs(v0).max()
    assert err < 1e-10


def test_relaxed_residual_plant_and_recover(g16, rng):
    from boussinesq_ci.spectral_core import random_field
    from boussinesq_ci.spectral_core import inverse_div_R, inverse_div_Rvex
    s = random_state(g16, seed=2, c1=0.2, theta_amp=0.3)
    dv, dth = rhs(s)
    f = random_field(g16, "vector", rng, kmax=4)
    h = random_field(g16, "scalar", rng, kmax=4)
    R = inverse_div_R(f)
    T = inverse_div_Rvex(h)
    rs = RelaxedState(s.t, s.v, s.theta, s.p, R, T)
    # with dv = rhs + div R, dth = rhs + div T the relaxed residual vanishes
    dvR = VectorField(g16, dv.values + divergence(R).values)
    dtT = ScalarField(g16, dth.values + divergence(T).values)
    rv, rt = relaxed_residual(rs, dvR, dtT)
    assert rv < 1e-11 and rt < 1e-11
    rv0, _ = relaxed_residual(rs, dv, dth)
    assert rv0 > 1e-3


def test_trajectory_residual_small(g16):
    s = random_state(g16, seed=4, c1=0.1, theta_amp=0.2)
    tr = solve_local(s, 0.02, 1e-3, check_lifespan=False)
    res = trajectory_residuals(tr)
    assert res.shape[1] == 2
    assert res.max() < 1e-8


def test_divergence_free_along_trajectory(g16):
    s = random_state(g16, seed=5, c1=0.1, theta_amp=0.2)
    tr = solve_local(s, 0.01, 1e-3, check_lifespan=False)
    assert tr.meta["div_max"] < 1e-12
