import numpy as np
import pytest

from boussinesq_ci.convex_integration import (ShearExact, TwoFlowStage, ZeroExact, build_blocks,
                                              flow_map, solve_flow_maps)
from boussinesq_ci.convex_integration.gluing import blend, stage_residual, step_cutoff
from boussinesq_ci.spectral_core import TorusGrid


def test_step_cutoff_endpoints():
    assert step_cutoff(0.0, 0.1, 0.2) == (1.0, 0.0)
    assert step_cutoff(0.3, 0.1, 0.2) == (0.0, 0.0)
    c, dc = step_cutoff(0.15, 0.1, 0.2)
    assert 0 < c < 1 and dc < 0


def test_blend_of_identical_flows_has_no_extra_stress(g16):
    A = ShearExact(g16, 0.7).snapshot(0.3)
    B = blend(g16, 0.37, -4.0, A, A)
    assert np.abs(B.R).max() < 1e-14 and np.abs(B.T).max() < 1e-14
    assert np.abs(B.v - A.v).max() < 1e-15


def test_two_flow_stage_is_relaxed_solution(g16):
    st = TwoFlowStage(ShearExact(g16, 0.5), ZeroExact(g16), 0.2, 0.4)
    for t in (0.1, 0.25, 0.3, 0.39, 0.5):
        rv, rt = stage_residual(g16, st.snapshot(t))
        assert rv < 1e-12 and rt < 1e-12


def _times(gl, step):
    ts = np.arange(gl.t[0], gl.t[-1] + 1e-12, step)
    return np.round(ts / step) * step


def test_glued_stresses_vanish_on_J(toy_glued):
    gl = toy_glued
    worst = 0.0
    nJ = 0
    for t in _times(gl, gl.tau / 10):
        kind, _ = gl.region(t)
        if kind == "J":
            s = gl.snapshot(t)
            worst = max(worst, np.abs(s.R).max(), np.abs(s.T).max())
            nJ += 1
    assert nJ > 0
    assert worst <= 1e-9


def test_glued_residual(toy_glued):
    gl = toy_glued
    worst = 0.0
    for t in _times(gl, gl.tau / 10):
        rv, rt = stage_residual(gl.grid, gl.snapshot(t))
        worst = max(worst, rv, rt)
    assert worst <= 1e-7


def test_glued_cutoffs(toy_glued):
    gl = toy_glued
    for i in range(gl.i_max):
        a, b = gl.I(i)
        assert gl.eta(i, 0.5 * (a + b)) == 1.0
        lo, hi = gl.eta_support(i)
        assert gl.eta(i, lo) == 0.0 and gl.eta(i, hi) == 0.0
        t = 0.5 * (a + b)
        assert abs(sum(gl.chi(k, t)[0] for k in range(gl.i_max + 1)) - 1.0) < 1e-15


class _Const:
    def __init__(self, g, u):
        self.grid = g
        self.u = np.asarray(u, dtype=float)

    def velocity(self, t):
        return np.broadcast_to(self.u[:, None, None, None], (3,) + self.grid.shape).copy()


def test_flow_map_constant_and_zero_velocity(g16):
    m = flow_map(_Const(g16, [0.3, -0.2, 0.0]), 0, 0.5, 0.4)
    expect = np.array([-0.03, 0.02, 0.0])[:, None, None, None]
    assert np.abs(m.D - expect).max() < 1e-13
    assert m.det_error() < 1e-13
    z = flow_map(_Const(g16, [0, 0, 0]), 0, 0.5, 0.4)
    assert np.abs(z.D).max() == 0.0


def test_flow_map_shear_measure_preserving(g16):
    # v = (0, 0, f(x1) t) transports along x3 only
    sh = ShearExact(g16, 0.5)
    m = flow_map(sh, 0, 0.6, 0.4)
    assert np.abs(m.D[:2]).max() < 1e-12
    assert m.det_error() < 1e-10
    x1 = g16.coords[0]
    expect = -0.5 * np.cos(2 * np.pi * x1) * (0.6**2 - 0.4**2) / 2
    assert np.abs(m.D[2] - expect).max() < 1e-8


def test_toy_flow_maps_and_block_overlap(toy_glued):
    fm = solve_flow_maps(toy_glued, samples=3)
    assert fm.det_error() <= 1e-6
    assert fm.dist_from_id() <= 0.1
    bb = build_blocks(lam1=16, grid=toy_glued.grid, allow_underresolved=True)
    assert max(bb.overlap_max(m.Phi) for m in fm.maps.values()) == 0.0
