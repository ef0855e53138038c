"""Pseudospectral integrator for the inviscid Boussinesq system on T^3.

    dv/dt + (v.grad) v + grad p = theta e_3,   div v = 0,
    dtheta/dt + v.grad theta = 0.

Products are dealiased with the grid's truncation rule and the pressure is
recovered spectrally from the divergence of the momentum equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral_core import (ScalarField, SymMatrixField, TorusGrid, VectorField,
                            _safe_inv, divergence, grad, holder_norm, random_field)

__all__ = [
    "BoussinesqState", "RelaxedState", "Trajectory", "SolverAbort", "CFLError",
    "LifespanError", "rhs", "step_rk4", "solve_local", "relaxed_residual",
    "shear_flow", "random_state", "resample", "trajectory_residuals", "pressure_of",
]


class SolverAbort(RuntimeError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


class CFLError(ValueError):
    pass


class LifespanError(ValueError):
    pass


@dataclass
class BoussinesqState:
    t: float
    v: VectorField
    theta: ScalarField
    p: ScalarField = None

    def __post_init__(self):
        if self.p is None:
            self.p = ScalarField.zeros(self.v.grid)

    @property
    def grid(self):
        return self.v.grid


@dataclass
class RelaxedState(BoussinesqState):
    R: SymMatrixField = None
    T: VectorField = None

    def __post_init__(self):
        super().__post_init__()
        g = self.v.grid
        if self.R is None:
            self.R = SymMatrixField.zeros(g)
        if self.T is None:
            self.T = VectorField.zeros(g)


def _tendency(g, v, theta, want_p=False):
    """Array-level right-hand side; returns (dv, dtheta, p or None)."""
    vh = g.fft(v)
    kd = g.kd
    adv = np.zeros_like(v)
    for i in range(3):
        for j in range(3):
            adv[i] += v[j] * g.ifft(1j * kd[j] * vh[i])
    th = g.fft(theta)
    vgt = sum(v[j] * g.ifft(1j * kd[j] * th) for j in range(3))
    Xh = -g.fft(adv)
    Xh[2] += th
    Xh *= g.mask
    kx = sum(kd[j] * Xh[j] for j in range(3)) * _safe_inv(g.kd2)
    dvh = np.stack([Xh[i] - kd[i] * kx for i in range(3)])
    dv = g.ifft(dvh)
    dth = -g.truncate(vgt)
    p = None
    if want_p:
        p = g.ifft(-1j * kx)
    return dv, dth, p


def pressure_of(v: VectorField, theta: ScalarField) -> ScalarField:
    g = v.grid
    return ScalarField(g, _tendency(g, v.values, theta.values, want_p=True)[2])


def rhs(state: BoussinesqState):
    """(dv/dt, dtheta/dt) = (P(theta e_3 - (v.grad)v), -v.grad theta)."""
    g = state.grid
    dv, dth, _ = _tendency(g, state.v.values, state.theta.values)
    return VectorField(g, dv), ScalarField(g, dth)


def _leray_arr(g, v):
    vh = g.fft(v)
    kd = g.kd
    kx = sum(kd[j] * vh[j] for j in range(3)) * _safe_inv(g.kd2)
    return g.ifft(np.stack([vh[i] - kd[i] * kx for i in range(3)]))


def _check_cfl(g, v, dt, cfl=0.5):
    vmax = float(np.sqrt(np.sum(v**2, axis=0)).max())
    if vmax > 0 and abs(dt) > cfl * g.h / vmax:
        raise CFLError(f"|dt| = {abs(dt):.3e} exceeds CFL limit {cfl * g.h / vmax:.3e} "
                       f"(h = {g.h:.3e}, |v|max = {vmax:.3e})")


def _rk4_arrays(g, v, th, dt, k1=None):
    if k1 is None:
        k1 = _tendency(g, v, th)[:2]
    k2 = _tendency(g, v + 0.5 * dt * k1[0], th + 0.5 * dt * k1[1])[:2]
    k3 = _tendency(g, v + 0.5 * dt * k2[0], th + 0.5 * dt * k2[1])[:2]
    k4 = _tendency(g, v + dt * k3[0], th + dt * k3[1])[:2]
    vn = v + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    tn = th + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return _leray_arr(g, vn), tn


def step_rk4(state: BoussinesqState, dt: float, cfl=0.5) -> BoussinesqState:
    """One classical RK4 step followed by Leray reprojection; dt may be negative."""
    g = state.grid
    _check_cfl(g, state.v.values, dt, cfl)
    vn, tn = _rk4_arrays(g, state.v.values, state.theta.values, dt)
    V, TH = VectorField(g, vn), ScalarField(g, tn)
    return BoussinesqState(state.t + dt, V, TH, pressure_of(V, TH))


def _c1(g, v):
    vh = g.fft(v)
    gm = 0.0
    for j in range(3):
        d = g.ifft(1j * g.kd[j] * vh)
        gm = max(gm, float(np.sqrt(np.sum(d**2, axis=0)).max()))
    return float(np.sqrt(np.sum(v**2, axis=0)).max()) + gm


class Trajectory:
    """Constant-step solution with stored frames and tendencies.

    Frames are kept at every step, so :meth:`at` can return a cubic Hermite
    interpolant (fourth-order accurate) at any time inside the range.
    """

    def __init__(self, grid, times, v, theta, dv, dtheta, meta=None):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self._v = v
        self._th = theta
        self._dv = dv
        self._dth = dtheta
        self.meta = meta or {}
        self._p_cache = {}

    def __len__(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def state(self, i, with_pressure=True):
        g = self.grid
        V, TH = VectorField(g, self._v[i]), ScalarField(g, self._th[i])
        P = None
        if with_pressure:
            if i not in self._p_cache:
                self._p_cache[i] = pressure_of(V, TH)
            P = self._p_cache[i]
        return BoussinesqState(float(self.times[i]), V, TH, P)

    def states(self):
        return [self.state(i) for i in range(len(self))]

    def samples(self):
        return [(float(t), VectorField(self.grid, self._v[i]), ScalarField(self.grid, self._th[i]))
                for i, t in enumerate(self.times)]

    def _locate(self, t):
        t0, t1 = min(self.times[0], self.times[-1]), max(self.times[0], self.times[-1])
        span = abs(self.dt) * 1e-9
        if t < t0 - span or t > t1 + span:
            raise ValueError(f"time {t} outside trajectory range [{t0}, {t1}]")
        s = (t - self.times[0]) / self.dt
        i = int(math.floor(s + 1e-9))
        i = min(max(i, 0), len(self.times) - 2)
        return i, s - i

    def at_arrays(self, t):
        """(v, theta, dv/dt, dtheta/dt) at time t by cubic Hermite interpolation."""
        if len(self.times) == 1:
            return self._v[0], self._th[0], self._dv[0], self._dth[0]
        i, s = self._locate(t)
        if abs(s) < 1e-9:
            return self._v[i], self._th[i], self._dv[i], self._dth[i]
        if abs(s - 1) < 1e-9:
            return self._v[i + 1], self._th[i + 1], self._dv[i + 1], self._dth[i + 1]
        h = self.dt
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        d00 = (6 * s**2 - 6 * s) / h
        d10 = 3 * s**2 - 4 * s + 1
        d01 = (-6 * s**2 + 6 * s) / h
        d11 = 3 * s**2 - 2 * s

        def herm(a, da, c0, c1, c2, c3):
            return c0 * a[i] + c1 * h * da[i] + c2 * a[i + 1] + c3 * h * da[i + 1]

        v = herm(self._v, self._dv, h00, h10, h01, h11)
        th = herm(self._th, self._dth, h00, h10, h01, h11)
        dv = herm(self._v, self._dv, d00, d10, d01, d11)
        dth = herm(self._th, self._dth, d00, d10, d01, d11)
        return v, th, dv, dth

    def at(self, t):
        v, th, _, _ = self.at_arrays(t)
        V, TH = VectorField(self.grid, v), ScalarField(self.grid, th)
        return BoussinesqState(float(t), V, TH, pressure_of(V, TH))


def solve_local(init: BoussinesqState, t_end: float, dt: float, c_desk=0.2, alpha=0.5,
                check_lifespan=True, cfl=0.5, blowup_floor=1.0, truncate_init=True):
    """Integrate from init.t to t_end with constant step (negative steps integrate backwards).

    The requested span must not exceed c_desk / (||v0||_{1+alpha} + 1).  The
    run aborts if ||v||_1 doubles (above ``blowup_floor``) within 10 steps.
    """
    g = init.grid
    span = t_end - init.t
    if dt == 0:
        raise ValueError("dt must be nonzero")
    nsteps = int(round(abs(span) / abs(dt)))
    if abs(nsteps * abs(dt) - abs(span)) > 1e-9 * max(abs(span), abs(dt)):
        raise ValueError(f"span {span} is not an integer multiple of dt {dt}")
    step = math.copysign(abs(dt), span) if span != 0 else dt
    v = init.v.values.copy()
    th = init.theta.values.copy()
    if truncate_init:
        v = _leray_arr(g, g.truncate(v))
        th = g.truncate(th)
    meta = {"c_desk": c_desk, "alpha": alpha, "dt": step, "n": g.n}
    if check_lifespan and nsteps > 0:
        lim = c_desk / (holder_norm(VectorField(g, v), 1, alpha) + 1.0)
        meta["lifespan_limit"] = lim
        if abs(span) > lim * (1 + 1e-12):
            raise LifespanError(f"requested span {abs(span):.4g} exceeds lifespan bound {lim:.4g} "
                                f"(c_desk = {c_desk})")
    vs, ths, dvs, dths = [v], [th], [], []
    c1_hist = [_c1(g, v)]
    k1 = _tendency(g, v, th)[:2]
    div_max = 0.0
    for n in range(nsteps):
        _check_cfl(g, v, step, cfl)
        dvs.append(k1[0])
        dths.append(k1[1])
        v, th = _rk4_arrays(g, v, th, step, k1=k1)
        k1 = _tendency(g, v, th)[:2]
        vs.append(v)
        ths.append(th)
        c1 = _c1(g, v)
        window = c1_hist[-10:]
        if c1 > 2.0 * max(min(window), blowup_floor):
            raise SolverAbort(f"blow-up sentinel: ||v||_1 rose from {min(window):.4g} to {c1:.4g} "
                              f"within 10 steps", payload={"step": n + 1, "t": init.t + (n + 1) * step,
                                                           "c1": c1, "window": window})
        c1_hist.append(c1)
        div_max = max(div_max, float(np.abs(divergence(VectorField(g, v)).values).max()))
    dvs.append(k1[0])
    dths.append(k1[1])
    times = init.t + step * np.arange(nsteps + 1)
    meta.update({"div_max": div_max, "c1_max": max(c1_hist)})
    return Trajectory(g, times, vs, ths, dvs, dths, meta)


def relaxed_residual(state: RelaxedState, dv_dt, dtheta_dt, fields=False):
    """Residuals of the relaxed system

        res_v = dv/dt + div(v (x) v) + grad p - theta e_3 - div R,
        res_theta = dtheta/dt + v.grad theta - div T.

    The nonlinear term carries the plus sign.  Returns sup norms, or fields
    if ``fields`` is true.
    """
    g = state.grid
    v = state.v.values
    dv = dv_dt.values if hasattr(dv_dt, "values") else np.asarray(dv_dt)
    dth = dtheta_dt.values if hasattr(dtheta_dt, "values") else np.asarray(dtheta_dt)
    vv = np.stack([g.mul(v[i], v[j]) for i, j in
                   ((0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2))])
    div_vv = divergence(SymMatrixField(g, vv)).values
    res_v = dv + div_vv + grad(state.p).values - divergence(state.R).values
    res_v[2] -= state.theta.values
    vt = g.mul(v, state.theta.values[None])
    res_t = dth + divergence(VectorField(g, vt)).values - divergence(state.T).values
    if fields:
        return VectorField(g, res_v), ScalarField(g, res_t)
    return (float(np.sqrt(np.sum(res_v**2, axis=0)).max()), float(np.abs(res_t).max()))


def trajectory_residuals(traj: Trajectory):
    """Boussinesq residual sup norms at interior frames using 5-point central differences."""
    out = []
    h = traj.dt
    for i in range(2, len(traj) - 2):
        c = np.array([1, -8, 0, 8, -1]) / (12 * h)
        dv = sum(c[m] * traj._v[i - 2 + m] for m in range(5))
        dth = sum(c[m] * traj._th[i - 2 + m] for m in range(5))
        st = traj.state(i)
        rs = RelaxedState(st.t, st.v, st.theta, st.p)
        out.append(relaxed_residual(rs, dv, dth))
    return np.array(out)


def shear_flow(grid: TorusGrid, A: float, t: float, f=None) -> BoussinesqState:
    """Closed-form solution v = (0, 0, A f(x_1) t), theta = A f(x_1), p = 0."""
    x1 = grid.coords[0]
    prof = np.cos(2 * np.pi * x1) if f is None else f(x1)
    v = np.zeros((3,) + grid.shape)
    v[2] = A * prof * t
    return BoussinesqState(t, VectorField(grid, v), ScalarField(grid, A * prof),
                           ScalarField.zeros(grid))


def random_state(grid: TorusGrid, seed=0, c1=0.1, theta_amp=1.0, kmax=4.0, t=0.0) -> BoussinesqState:
    """Smooth random divergence-free state with ||v||_1 = c1 and sup |theta| = theta_amp."""
    rng = np.random.default_rng(seed)
    u = random_field(grid, "vector", rng, kmax=kmax)
    v = _leray_arr(grid, u.values)
    v -= v.mean(axis=(1, 2, 3), keepdims=True)
    v *= c1 / holder_norm(VectorField(grid, v), 1)
    th = random_field(grid, "scalar", rng, kmax=kmax, amp=theta_amp)
    V = VectorField(grid, v)
    return BoussinesqState(t, V, th, pressure_of(V, th))


def resample(field_obj, grid: TorusGrid):
    """Spectral zero-padding or truncation of a field onto another grid."""
    src = field_obj.grid
    if src == grid:
        return field_obj
    vals = field_obj.values
    lead = vals.shape[:-3]
    out = _resample_arr(vals.reshape((-1,) + src.shape), src.n, grid.n).reshape(lead + grid.shape)
    if isinstance(field_obj, SymMatrixField):
        return SymMatrixField(grid, out, trace_free=field_obj.trace_free)
    return type(field_obj)(grid, out)


def _resample_arr(a, n_src, n_dst):
    import scipy.fft as sfft
    ah = sfft.fftn(a, axes=(-3, -2, -1))
    m = min(n_src, n_dst) // 2
    out = np.zeros(a.shape[:-3] + (n_dst,) * 3, dtype=complex)
    idx_s = np.r_[0:m, n_src - m + 1:n_src]
    idx_d = np.r_[0:m, n_dst - m + 1:n_dst]
    out[..., idx_d[:, None, None], idx_d[None, :, None], idx_d[None, None, :]] = \
        ah[..., idx_s[:, None, None], idx_s[None, :, None], idx_s[None, None, :]]
    return np.real(sfft.ifftn(out, axes=(-3, -2, -1))) * (n_dst / n_src) ** 3
