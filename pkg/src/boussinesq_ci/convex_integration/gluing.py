"""Stages of the iteration: exact flows, two-flow stages, mollification and gluing.

Every stage exposes ``snapshot(t)`` returning a :class:`Snapshot` of arrays that
solve the relaxed system

    dv/dt + div(v (x) v) + grad p - theta e_3 = div R,
    dtheta/dt + div(v theta) = div T,

on the stage grid, together with the time derivatives used in that identity.
Blending two relaxed solutions A, B with a time weight c gives another one:

    R = c R_A + (1-c) R_B + c' R(dv) - c(1-c) dv (x)o dv,
    T = c T_A + (1-c) T_B + c' R_vex(dth) - c(1-c) dv dth,
    p = c p_A + (1-c) p_B + c(1-c)(|dv|^2 - mean)/3,

with dv = v_A - v_B and dth = theta_A - theta_B.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..boussinesq_solver import (BoussinesqState, RelaxedState, SolverAbort, _resample_arr,
                                 _tendency, relaxed_residual, solve_local)
from ..littlewood_paley import smoothstep
from ..spectral_core import (Mollifier, ScalarField, SymMatrixField, TorusGrid, VectorField,
                             inverse_div_R, inverse_div_Rvex, SYM_INDEX)

__all__ = [
    "Snapshot", "ShearExact", "ZeroExact", "TrajectoryExact", "ExactFlowStage", "TwoFlowStage",
    "MollifiedStage", "GluedStage", "StageError", "step_cutoff", "mollify_stage", "build_glued",
    "stage_residual", "blend",
]


class StageError(RuntimeError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


def dsmoothstep(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = (t > 0) & (t < 1)
    tm = t[m]
    a = np.exp(-1.0 / tm)
    b = np.exp(-1.0 / (1.0 - tm))
    out[m] = a * b * (1.0 / tm**2 + 1.0 / (1.0 - tm) ** 2) / (a + b) ** 2
    return out


def step_cutoff(t, t0, t1):
    """(value, derivative) of the smooth step that is 1 for t <= t0 and 0 for t >= t1."""
    L = t1 - t0
    s = (t - t0) / L
    return float(1.0 - smoothstep(s)), float(-dsmoothstep(s) / L)


@dataclass
class Snapshot:
    t: float
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    dv: np.ndarray
    dtheta: np.ndarray
    R: np.ndarray = None     # storage order of SymMatrixField, trace-free
    T: np.ndarray = None

    def __post_init__(self):
        if self.R is None:
            self.R = np.zeros((6,) + self.v.shape[1:])
        if self.T is None:
            self.T = np.zeros_like(self.v)

    def relaxed_state(self, grid):
        return RelaxedState(self.t, VectorField(grid, self.v), ScalarField(grid, self.theta),
                            ScalarField(grid, self.p), SymMatrixField(grid, self.R, trace_free=True),
                            VectorField(grid, self.T))


def _sym_outer_tf(g, a, b=None):
    """Trace-free symmetric part of a (x) a (or sym(a (x) b)) with dealiased products."""
    b = a if b is None else b
    out = np.stack([0.5 * (g.mul(a[i], b[j]) + g.mul(a[j], b[i])) for i, j in SYM_INDEX])
    tr = (out[0] + out[1] + out[2]) / 3.0
    out[:3] -= tr
    return out


def _mean_free(a):
    return a - a.mean()


def stage_residual(grid, snap: Snapshot):
    """Sup norms of the relaxed-system residual of a snapshot."""
    return relaxed_residual(snap.relaxed_state(grid), snap.dv, snap.dtheta)


def blend(grid, c, dc, A: Snapshot, B: Snapshot) -> Snapshot:
    """Time-weighted combination c A + (1-c) B with the stresses that keep it a relaxed solution."""
    if c == 1.0 and dc == 0.0:
        return A
    if c == 0.0 and dc == 0.0:
        return B
    g = grid
    dV = A.v - B.v
    dT = A.theta - B.theta
    v = c * A.v + (1 - c) * B.v
    th = c * A.theta + (1 - c) * B.theta
    dv = dc * dV + c * A.dv + (1 - c) * B.dv
    dth = dc * dT + c * A.dtheta + (1 - c) * B.dtheta
    w = c * (1 - c)
    R = c * A.R + (1 - c) * B.R - w * _sym_outer_tf(g, dV)
    T = c * A.T + (1 - c) * B.T - w * g.mul(dV, dT[None])
    if dc != 0.0:
        R = R + dc * inverse_div_R(VectorField(g, dV)).values
        T = T + dc * inverse_div_Rvex(ScalarField(g, dT)).values
    p = c * A.p + (1 - c) * B.p + w / 3.0 * _mean_free(sum(g.mul(dV[i], dV[i]) for i in range(3)))
    return Snapshot(A.t, v, th, _mean_free(p), dv, dth, R, T)


# ---------------------------------------------------------------- exact flows


class ShearExact:
    """v = (0, 0, A f(x_1) t), theta = A f(x_1), p = 0."""

    native = True

    def __init__(self, grid, A, f=None):
        self.grid = grid
        self.A = float(A)
        x1 = grid.coords[0]
        self._prof = grid.truncate(np.cos(2 * np.pi * x1) if f is None else f(x1))

    def snapshot(self, t):
        g = self.grid
        v = np.zeros((3,) + g.shape)
        dv = np.zeros_like(v)
        v[2] = self.A * self._prof * t
        dv[2] = self.A * self._prof
        return Snapshot(float(t), v, self.A * self._prof, np.zeros(g.shape), dv, np.zeros(g.shape))

    def velocity(self, t):
        v = np.zeros((3,) + self.grid.shape)
        v[2] = self.A * self._prof * t
        return v


class ZeroExact:
    native = True

    def __init__(self, grid):
        self.grid = grid

    def snapshot(self, t):
        z = np.zeros((3,) + self.grid.shape)
        s = np.zeros(self.grid.shape)
        return Snapshot(float(t), z, s, s, z.copy(), s.copy())

    def velocity(self, t):
        return np.zeros((3,) + self.grid.shape)


class TrajectoryExact:
    """Exact flow from one or two stored trajectories, optionally upsampled.

    Between stored steps the fields are Hermite-interpolated; when ``grid`` is
    finer than the trajectory grid they are also zero-padded.  The residual of
    what is returned is carried as a defect stress, so a snapshot is always an
    exact relaxed solution on ``grid``.
    """

    def __init__(self, trajs, grid=None):
        self.trajs = list(trajs) if isinstance(trajs, (list, tuple)) else [trajs]
        self.src = self.trajs[0].grid
        self.grid = self.src if grid is None else grid
        self.native = self.grid == self.src
        self.defect_sup = 0.0

    def _pick(self, t):
        for tr in self.trajs:
            a, b = sorted((tr.times[0], tr.times[-1]))
            if a - 1e-12 <= t <= b + 1e-12:
                return tr
        raise StageError(f"time {t} outside all stored trajectories")

    def velocity(self, t):
        v = self._pick(t).at_arrays(t)[0]
        return v if self.native else _resample_arr(v, self.src.n, self.grid.n)

    def snapshot(self, t):
        tr = self._pick(t)
        v, th, dv, dth = tr.at_arrays(t)
        p = _tendency(self.src, v, th, want_p=True)[2]
        if not self.native:
            ns, nd = self.src.n, self.grid.n
            up = _resample_arr(np.concatenate([v, th[None], dv, dth[None], p[None]]), ns, nd)
            v, th, dv, dth, p = up[:3], up[3], up[4:7], up[7], up[8]
        g = self.grid
        snap = Snapshot(float(t), v, th, p, dv, dth)
        rv, rt = relaxed_residual(snap.relaxed_state(g), dv, dth, fields=True)
        snap.R = inverse_div_R(rv).values
        snap.T = inverse_div_Rvex(rt).values
        self.defect_sup = max(self.defect_sup, float(np.abs(rv.values).max()), float(np.abs(rt.values).max()))
        return snap


# ---------------------------------------------------------------- stages


class ExactFlowStage:
    """A stage that is itself an exact solution (zero stresses)."""

    def __init__(self, flow, t_range=(0.0, 1.0)):
        self.flow = flow
        self.grid = flow.grid
        self.t_range = t_range
        self.exact_left = flow
        self.exact_right = flow

    def snapshot(self, t):
        return self.flow.snapshot(t)

    def velocity(self, t):
        return self.flow.velocity(t)


class TwoFlowStage:
    """chi(t) v1 + (1 - chi(t)) v2 with chi = 1 before t_a and 0 after t_b."""

    def __init__(self, flow1, flow2, t_a, t_b):
        if not t_a < t_b:
            raise ValueError("need t_a < t_b")
        if flow1.grid != flow2.grid:
            raise ValueError("flows live on different grids")
        self.grid = flow1.grid
        self.exact_left, self.exact_right = flow1, flow2
        self.t_a, self.t_b = float(t_a), float(t_b)

    def cutoff(self, t):
        return step_cutoff(t, self.t_a, self.t_b)

    def snapshot(self, t):
        c, dc = self.cutoff(t)
        A = self.exact_left.snapshot(t)
        B = self.exact_right.snapshot(t)
        return blend(self.grid, c, dc, A, B)

    def velocity(self, t):
        c, _ = self.cutoff(t)
        return c * self.exact_left.velocity(t) + (1 - c) * self.exact_right.velocity(t)


class MollifiedStage:
    """Spatial mollification of a stage with the commutator stresses.

    v_l = v * psi, theta_l = theta * psi,
    p_l = p * psi + (|v|^2 * psi - |v_l|^2)/3,
    R_l = R * psi - (v (x)o v) * psi + v_l (x)o v_l,
    T_l = T * psi - (v theta) * psi + v_l theta_l.
    """

    def __init__(self, stage, ell):
        g = stage.grid
        if ell < 2 * g.h:
            raise ValueError(f"mollifier width {ell:.4g} below resolution floor 2h = {2 * g.h:.4g} (n={g.n})")
        self.base = stage
        self.grid = g
        self.ell = float(ell)
        self.exact_left = stage.exact_left
        self.exact_right = stage.exact_right
        self._mult = Mollifier("space", ell).multiplier(g)

    def moll(self, a):
        g = self.grid
        return g.ifft(g.fft(a) * self._mult)

    def snapshot(self, t):
        g = self.grid
        s = self.base.snapshot(t)
        m = self.moll
        vl, thl = m(s.v), m(s.theta)
        v2 = sum(g.mul(s.v[i], s.v[i]) for i in range(3))
        vl2 = sum(g.mul(vl[i], vl[i]) for i in range(3))
        p = m(s.p) + (m(v2) - vl2) / 3.0
        R = m(s.R) - m(_sym_outer_tf(g, s.v)) + _sym_outer_tf(g, vl)
        T = m(s.T) - m(g.mul(s.v, s.theta[None])) + g.mul(vl, thl[None])
        return Snapshot(s.t, vl, thl, _mean_free(p), m(s.dv), m(s.dtheta), R, T)

    def velocity(self, t):
        return self.moll(self.base.velocity(t))


def mollify_stage(stage, ell):
    return MollifiedStage(stage, ell)


@dataclass
class GluedStage:
    """Exact flows glued with a partition of unity in time.

    Interior flows start from the mollified stage at t_i = 2 T_tilde + i tau
    and are solved on [t_i - tau, t_i + tau].  The endpoint flows are the
    stage's exact flows.  On I_i = [t_i + tau/3, t_i + 2 tau/3] the weight of
    flow i falls from 1 to 0 and flow i+1 takes over; on the J_i a single flow
    is active and the glued stresses vanish.
    """
    mollified: object
    tau: float
    T_tilde: float
    flows: list
    i_max: int
    grid: TorusGrid
    meta: dict = field(default_factory=dict)

    @property
    def t(self):
        return [2 * self.T_tilde + i * self.tau for i in range(self.i_max + 1)]

    def I(self, i):
        ti = self.t[i]
        return (ti + self.tau / 3, ti + 2 * self.tau / 3)

    def J(self, i):
        ti = self.t[i]
        if i == 0:
            return (0.0, ti + self.tau / 3)
        if i == self.i_max:
            return (self.t[i - 1] + 2 * self.tau / 3, 1.0)
        return (ti - self.tau / 3, ti + self.tau / 3)

    def eta(self, i, t):
        """Cutoff equal to 1 on I_i with support I_i +- tau/6."""
        a, b = self.I(i)
        h = self.tau / 6
        up = 1.0 - step_cutoff(t, a - h, a)[0]
        down = step_cutoff(t, b, b + h)[0]
        return up * down

    def eta_support(self, i):
        a, b = self.I(i)
        return (a - self.tau / 6, b + self.tau / 6)

    def deta(self, i, t):
        a, b = self.I(i)
        h = self.tau / 6
        u, du = step_cutoff(t, a - h, a)
        d, dd = step_cutoff(t, b, b + h)
        return -du * d + (1 - u) * dd

    def chi(self, i, t):
        """Weight of flow i and its derivative."""
        if i > 0:
            a, b = self.I(i - 1)
            if a < t < b:
                c, dc = step_cutoff(t, a, b)
                return 1 - c, -dc
        if i < self.i_max:
            a, b = self.I(i)
            if a < t < b:
                return step_cutoff(t, a, b)
        lo = self.I(i - 1)[1] if i > 0 else -math.inf
        hi = self.I(i)[0] if i < self.i_max else math.inf
        return (1.0, 0.0) if lo <= t <= hi else (0.0, 0.0)

    def region(self, t):
        """('I', i) or ('J', i)."""
        for i in range(self.i_max):
            a, b = self.I(i)
            if a <= t <= b:
                return "I", i
        for i in range(self.i_max + 1):
            a, b = self.J(i)
            if a <= t <= b:
                return "J", i
        raise StageError(f"time {t} outside the glued range")

    def snapshot(self, t):
        kind, i = self.region(t)
        if kind == "J":
            return self.flows[i].snapshot(t)
        a, b = self.I(i)
        c, dc = step_cutoff(t, a, b)
        return blend(self.grid, c, dc, self.flows[i].snapshot(t), self.flows[i + 1].snapshot(t))

    def velocity(self, t):
        kind, i = self.region(t)
        if kind == "J":
            return self.flows[i].velocity(t)
        a, b = self.I(i)
        c, _ = step_cutoff(t, a, b)
        return c * self.flows[i].velocity(t) + (1 - c) * self.flows[i + 1].velocity(t)


def build_glued(mstage, tau, T_tilde, dt, solve_n=None, c_desk=0.2, alpha=0.5,
                check_lifespan=True) -> GluedStage:
    """Glue local exact solutions started from the mollified stage.

    ``solve_n`` selects a coarser companion grid for the interior solves; the
    solutions are then upsampled and carry their fine-grid defect as stress.
    """
    g = mstage.grid
    i_max = int(math.floor(T_tilde / tau + 1e-12))
    if i_max < 1:
        raise ValueError(f"T_tilde / tau = {T_tilde / tau:.4g} gives i_max < 1")
    frac = T_tilde / tau - i_max
    if frac > 2 / 3 + 1e-12:
        raise ValueError("the last flow would start after its interval: need frac(T_tilde/tau) <= 2/3")
    sg = g if solve_n is None or solve_n == g.n else TorusGrid(solve_n, g.dealias)
    flows = [mstage.exact_left]
    defects = []
    for i in range(1, i_max):
        ti = 2 * T_tilde + i * tau
        s = mstage.snapshot(ti)
        v, th = s.v, s.theta
        if sg != g:
            v = _resample_arr(v, g.n, sg.n)
            th = _resample_arr(th[None], g.n, sg.n)[0]
        init = BoussinesqState(ti, VectorField(sg, v), ScalarField(sg, th))
        try:
            fwd = solve_local(init, ti + tau, dt, c_desk=c_desk, alpha=alpha,
                              check_lifespan=check_lifespan)
            bwd = solve_local(init, ti - tau, dt, c_desk=c_desk, alpha=alpha,
                              check_lifespan=False)
        except SolverAbort as e:
            raise StageError(f"local solve for flow {i} aborted: {e}", payload=e.payload) from e
        flows.append(TrajectoryExact([bwd, fwd], grid=g))
        defects.append(fwd.meta.get("lifespan_limit"))
    flows.append(mstage.exact_right)
    meta = {"solve_n": sg.n, "dt": dt, "lifespan_limits": defects, "ell": getattr(mstage, "ell", None)}
    return GluedStage(mollified=mstage, tau=float(tau), T_tilde=float(T_tilde), flows=flows,
                      i_max=i_max, grid=g, meta=meta)
