"""Frequency-localized flux diagnostics for transported scalars.

The low-pass product is split as
    S_Q(v theta) = r_Q - (v - S_Q v)(theta - S_Q theta) + S_Q v S_Q theta,
and the three pieces are paired with grad g, where g is the derivative of the
conserved density evaluated at S_Q theta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson

from .littlewood_paley import besov_sequence, k_kernel_convolve, lp_norm, s_q
from .spectral_core import ScalarField, VectorField, grad, write_csv

__all__ = [
    "FluxReport", "PhiDelta", "phi_delta_eval", "commutator_rQ",
    "lp_balance_residual", "lp_balance_residual_small_p",
    "energy_balance_residual", "lacunary_field", "fit_log2_slope",
]


def _samples(traj):
    """Normalize a trajectory to a list of (t, v, theta)."""
    if hasattr(traj, "samples"):
        traj = traj.samples()
    out = []
    for s in traj:
        if isinstance(s, tuple):
            out.append(s)
        else:
            out.append((s.t, s.v, s.theta))
    return out


def _check_uniform(times, min_samples=3):
    if len(times) < min_samples:
        raise ValueError(f"need at least {min_samples} time samples, got {len(times)}")
    dt = np.diff(times)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(abs(dt).max(), 1e-300):
        raise ValueError("trajectory samples must be uniformly spaced in time")


def _trapz_cumulative(y, t):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


@dataclass
class PhiDelta:
    """Smooth approximation of |z|: z^2/(2 delta) inside [-delta, delta], |z| - delta/2 outside."""
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def value(self, z):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        return np.where(a <= self.delta, z * z / (2 * self.delta), a - self.delta / 2)

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) <= self.delta, z / self.delta, np.sign(z))


def phi_delta_eval(z, delta):
    pd = PhiDelta(delta)
    v, d = pd.value(z), pd.deriv(z)
    if np.ndim(v) == 0:
        return float(v), float(d)
    return v, d


def commutator_rQ(v: VectorField, theta: ScalarField, Q: int) -> VectorField:
    """r_Q = S_Q(v theta) + (v - S_Q v)(theta - S_Q theta) - S_Q v S_Q theta, dealiased products."""
    if v.grid != theta.grid:
        raise ValueError("fields live on different grids")
    g = v.grid
    vt = VectorField(g, g.mul(v.values, theta.values[None]))
    sv, st = s_q(v, Q), s_q(theta, Q)
    hv, ht = v - sv, theta - st
    r = (s_q(vt, Q).values + g.mul(hv.values, ht.values[None])
         - g.mul(sv.values, st.values[None]))
    return VectorField(g, r)


@dataclass
class FluxReport:
    Q: int
    p: float
    times: np.ndarray
    terms: np.ndarray           # signed, shape (3, nt): I, II, III (or IV, V, VI)
    lhs: np.ndarray             # |(1/p)(||.||_p^p(t) - ||.||_p^p(0))|
    signed_lhs: np.ndarray
    bound: np.ndarray
    kv: np.ndarray              # (K * d_inf(v))(Q)
    ktheta: np.ndarray          # (K * d_p(theta))(Q)
    balance_residual: float
    delta: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def magnitudes(self):
        return np.abs(self.terms)

    @property
    def measured_C(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(self.bound > 0, self.lhs / self.bound, 0.0)
        return c

    @property
    def max_C(self):
        return float(np.max(self.measured_C))

    def rows(self):
        m = self.magnitudes
        for i, t in enumerate(self.times):
            yield (float(t), int(self.Q), m[0, i], m[1, i], m[2, i],
                   float(self.lhs[i]), float(self.bound[i]), float(self.measured_C[i]))

    def to_csv(self, path):
        write_csv(path, ["t", "Q", "termI", "termII", "termIII", "lhs", "bound", "measured_C"],
                  self.rows())


def _pair(vec_field, gradg):
    return float(np.mean(np.sum(vec_field * gradg, axis=0)))


def _flux_terms(v, theta, Q, gfun):
    g = v.grid
    sv, st = s_q(v, Q), s_q(theta, Q)
    gg = grad(ScalarField(g, gfun(st.values))).values
    r = commutator_rQ(v, theta, Q).values
    hv = (v - sv).values
    ht = (theta - st).values
    t1 = _pair(r, gg)
    t2 = -_pair(g.mul(hv, ht[None]), gg)
    t3 = _pair(g.mul(sv.values, st.values[None]), gg)
    return (t1, t2, t3), st


def _balance(traj, Q, p_density, gfun, bound_integrand, delta=None, p=2.0):
    samples = _samples(traj)
    times = np.array([s[0] for s in samples], dtype=float)
    _check_uniform(times)
    terms, dens, bint, kvs, kts = [], [], [], [], []
    for t, v, theta in samples:
        tt, st = _flux_terms(v, theta, Q, gfun)
        terms.append(tt)
        dens.append(p_density(st.values))
        kv = k_kernel_convolve(besov_sequence(v, math.inf), Q)
        b, kt = bound_integrand(v, theta, kv)
        bint.append(b)
        kvs.append(kv)
        kts.append(kt)
    terms = np.array(terms).T
    dens = np.array(dens)
    signed = dens - dens[0]
    flux_int = _trapz_cumulative(terms.sum(axis=0), times)
    bound = _trapz_cumulative(np.array(bint), times)
    resid = float(np.max(np.abs(signed - flux_int)))
    return FluxReport(Q=Q, p=p, times=times, terms=terms, lhs=np.abs(signed), signed_lhs=signed,
                      bound=bound, kv=np.array(kvs), ktheta=np.array(kts),
                      balance_residual=resid, delta=delta)


def lp_balance_residual(trajectory, p: float, Q: int) -> FluxReport:
    """L^p balance of S_Q theta against the integrated flux bound
    int (K*d_inf v)(K*d_p theta)^2 ||theta||_p^{p-2}."""
    if not (2 <= p < math.inf):
        raise ValueError("p must lie in [2, inf)")

    def density(st):
        return float(np.mean(np.abs(st) ** p)) / p

    def gfun(st):
        return st * np.abs(st) ** (p - 2)

    def bound_integrand(v, theta, kv):
        kt = k_kernel_convolve(besov_sequence(theta, p), Q)
        return kv * kt**2 * lp_norm(theta, p) ** (p - 2), kt

    return _balance(trajectory, Q, density, gfun, bound_integrand, p=p)


def lp_balance_residual_small_p(trajectory, p: float, delta: float, Q: int) -> FluxReport:
    """Balance of (1/p) int phi_delta(S_Q theta)^p for p in [1, 2), with the
    delta^{p-2} (K*d_inf v)(K*d_p theta)(K*d_p' theta) bound, p' = p/(p-1)."""
    if not (1 <= p < 2):
        raise ValueError("p must lie in [1, 2)")
    pd = PhiDelta(delta)
    pconj = math.inf if p == 1 else p / (p - 1)

    def density(st):
        return float(np.mean(pd.value(st) ** p)) / p

    def gfun(st):
        return pd.value(st) ** (p - 1) * pd.deriv(st)

    def bound_integrand(v, theta, kv):
        kt = k_kernel_convolve(besov_sequence(theta, p), Q)
        kc = k_kernel_convolve(besov_sequence(theta, pconj), Q)
        return delta ** (p - 2) * kv * kt * kc, kt

    rep = _balance(trajectory, Q, density, gfun, bound_integrand, delta=delta, p=p)
    return rep


def energy_balance_residual(trajectory, quadrature="trapezoid") -> float:
    """sup_t | ||v(t)||^2 - ||v(0)||^2 - 2 int_0^t int theta v_3 |.

    The time integral is by the trapezoid rule; ``quadrature="simpson"`` uses
    cumulative Simpson instead, which separates the O(dt^2) quadrature error
    from the solver error.
    """
    samples = _samples(trajectory)
    times = np.array([s[0] for s in samples], dtype=float)
    _check_uniform(times, min_samples=2)
    e = np.array([float(np.mean(np.sum(v.values**2, axis=0))) for _, v, _ in samples])
    work = np.array([float(np.mean(th.values * v.values[2])) for _, v, th in samples])
    if quadrature == "trapezoid":
        integral = _trapz_cumulative(work, times)
    elif quadrature == "simpson":
        if len(times) < 3:
            raise ValueError("simpson quadrature needs at least 3 samples")
        integral = cumulative_simpson(work, x=times, initial=0.0)
    else:
        raise ValueError("quadrature must be 'trapezoid' or 'simpson'")
    res = e - e[0] - 2.0 * integral
    return float(np.max(np.abs(res)))


def lacunary_field(grid, beta, axis=0, amp=1.0, m_min=0):
    """sum_m 2^{-m beta} cos(2 pi 2^m x_axis) over the octaves the grid retains."""
    x = grid.coords[axis]
    f = np.zeros(grid.shape)
    m = m_min
    while 2**m <= grid.cutoff:
        f += 2.0 ** (-m * beta) * np.cos(2 * np.pi * 2**m * x)
        m += 1
    return ScalarField(grid, amp * f)


def fit_log2_slope(js, values):
    js = np.asarray(js, dtype=float)
    y = np.log2(np.asarray(values, dtype=float))
    return float(np.polyfit(js, y, 1)[0])
