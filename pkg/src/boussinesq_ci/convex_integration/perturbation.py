"""Perturbations (w, d), the new stresses, and the checks of one iteration step.

At a time t in supp eta_i, with G = grad Phi_i (G[a, b] = d_b Phi_a):

    T_k      = (-G Tbar)_k                      for k = e_1, e_2, e_3,
    R_v      = G (Id - Rbar / (delta l^alpha)) G^T - delta^-2 l^-2alpha sum_k T_k^2 k (x) k,
    w^(p)    = eta sum_k [delta^-1/2 l^-alpha/2 T_k G^-1 W^theta_k k + delta^1/2 l^alpha/2 a_k(R_v) G^-1 W^v_k kbar],
    d        = delta^1/2 l^alpha/2 eta sum_k W^theta_k - mean,

with all blocks evaluated at lam Phi_i.  The velocity perturbation is built in
curl form, w = curl(sum_k c_k G^T U_k(lam Phi)) / lam, so div w = 0 on the
grid; the corrector w^(c) = sum_k grad c_k x (G^T U_k) / lam is reported
alongside.  With this R_v, the low-frequency part of w^(p) (x) w^(p) + Rbar
equals delta l^alpha eta^2 Id, and that of w^(p) d + Tbar vanishes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..boussinesq_solver import RelaxedState, relaxed_residual
from ..spectral_core import (ScalarField, SymMatrixField, VectorField, divergence,
                             inverse_div_R, inverse_div_Rvex, sup_norm, SYM_INDEX)
from .flowmaps import flow_map
from .geometry import GeometryError, geometric_coeffs
from .gluing import Snapshot, _sym_outer_tf

__all__ = ["PerturbationError", "Perturbation", "build_perturbation", "perturbation_at",
           "NextStage", "assemble_next", "inductive_check", "InductiveReport"]


class PerturbationError(RuntimeError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


def _full(S):
    """Storage (6, ...) to full (3, 3, ...)."""
    out = np.empty((3, 3) + S.shape[1:])
    for c, (i, j) in enumerate(SYM_INDEX):
        out[i, j] = S[c]
        out[j, i] = S[c]
    return out


def _storage(M):
    return np.stack([M[i, j] for i, j in SYM_INDEX])


def _matvec(A, x):
    return np.einsum("ab...,b...->a...", A, x)


def _cross(a, b):
    return np.stack([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


@dataclass
class Perturbation:
    t: float
    i: int
    eta: float
    w: np.ndarray
    wp: np.ndarray
    wc: np.ndarray
    d: np.ndarray
    Tk: np.ndarray
    a: np.ndarray
    Rv: np.ndarray
    rv_dist: float
    checks: dict = field(default_factory=dict)


def _spectral_grad_scalar(g, f):
    fh = g.fft(f)
    return np.stack([g.ifft(1j * g.kd[j] * fh) for j in range(3)])


def perturbation_at(glued, i, t, blocks, dirs, delta, ell, alpha, fmap=None, snap=None,
                    check_ball=True, map_kw=None, diag=True):
    """(w, w^p, w^c, d) at time t for the flow-map index i.

    With ``diag`` false only w and d are kept (w^p, w^c, coefficients are None),
    which is what the time-difference stencil needs.
    """
    g = glued.grid
    eta = glued.eta(i, t)
    if snap is None:
        snap = glued.snapshot(t)
    if eta == 0.0:
        z = np.zeros((3,) + g.shape)
        z6 = np.zeros((6,) + g.shape)
        return Perturbation(t, i, 0.0, z, z.copy() if diag else None, z.copy() if diag else None,
                            np.zeros(g.shape), z.copy(), z6, z6.copy(), 0.0)
    if fmap is None:
        fmap = flow_map(glued, i, t, glued.t[i], **(map_kw or {}))
    G = fmap.grad
    dl = delta * ell**alpha
    Tk = -_matvec(G, snap.T)
    Rbar = _full(snap.R)
    GR = np.einsum("ac...,cd...->ad...", G, Rbar)
    del Rbar
    Rv_s = np.empty((6,) + g.shape)
    for c, (a, b) in enumerate(SYM_INDEX):
        Rv_s[c] = np.sum((G[a] - GR[a] / dl) * G[b], axis=0)
        if a == b:
            Rv_s[c] -= Tk[a] ** 2 / dl**2
    del GR
    dist = np.sqrt(sum((Rv_s[c] - 1.0) ** 2 for c in range(3)) + 2 * sum(Rv_s[c] ** 2 for c in range(3, 6)))
    rv_dist = float(dist.max())
    try:
        a_v = geometric_coeffs(Rv_s, dirs, storage=True, check=check_ball)
    except GeometryError as e:
        worst = np.unravel_index(int(np.argmax(dist)), dist.shape)
        raise PerturbationError(f"R_v leaves the geometric-lemma ball at t = {t:.6g}: {e}",
                                payload={"t": t, "i": i, "worst_index": [int(x) for x in worst],
                                         "dist": rv_dist, "eps_v": dirs.eps_v}) from e
    del dist
    Phi = fmap.Phi
    Gi = fmap.inv_grad() if diag else None
    sq = math.sqrt(dl)
    lam = blocks.lam
    S = np.zeros((3,) + g.shape)
    wp = np.zeros((3,) + g.shape) if diag else None
    wc = np.zeros((3,) + g.shape) if diag else None
    dsum = np.zeros(g.shape)
    fams = [("theta", a) for a in range(3)] + [("v", k) for k in range(6)]
    for kind, idx in fams:
        c = eta * Tk[idx] / sq if kind == "theta" else eta * sq * a_v[idx]
        W = blocks.W(kind, idx, Phi)
        if kind == "theta":
            dsum += W
        if diag:
            direc = blocks.direction(kind, idx).reshape(3, 1, 1, 1)
            wp += c * _matvec(Gi, W[None] * direc)
        del W
        U = blocks.potential(kind, idx, Phi)
        GtU = np.einsum("ba...,b...->a...", G, U)
        del U
        S += c * GtU / lam
        if diag:
            wc += _cross(_spectral_grad_scalar(g, c), GtU) / lam
        del GtU
    Sh = g.fft(S)
    del S
    k0, k1, k2 = g.kd
    wh = np.stack([1j * (k1 * Sh[2] - k2 * Sh[1]), 1j * (k2 * Sh[0] - k0 * Sh[2]),
                   1j * (k0 * Sh[1] - k1 * Sh[0])]) * g.mask
    del Sh
    w = g.ifft(wh)
    del wh
    d = sq * eta * dsum
    d = g.truncate(d - d.mean())
    if not diag:
        return Perturbation(t, i, eta, w, None, None, d, None, None, None, rv_dist)
    return Perturbation(t, i, eta, w, wp, wc, d, Tk, a_v, Rv_s, rv_dist)


def _osc_checks(glued, pert, snap, fmap, blocks, dirs, delta, ell, alpha):
    """Pointwise cancellation identities and divergence of w."""
    g = glued.grid
    eta = pert.eta
    dl = delta * ell**alpha
    Gi = fmap.inv_grad()
    L = np.zeros((3, 3) + g.shape)
    for a in range(3):
        k = np.eye(3)[a].reshape(3, 1, 1, 1)
        u = _matvec(Gi, np.broadcast_to(k, (3,) + g.shape))
        L += eta**2 * pert.Tk[a] ** 2 / dl * np.einsum("a...,b...->ab...", u, u)
    for m, fr in enumerate(dirs.v_frames):
        kb = fr.vec("kbar").reshape(3, 1, 1, 1)
        u = _matvec(Gi, np.broadcast_to(kb, (3,) + g.shape))
        L += eta**2 * dl * pert.a[m] ** 2 * np.einsum("a...,b...->ab...", u, u)
    L += _full(snap.R)
    for a in range(3):
        L[a, a] -= dl * eta**2
    scale_R = max(dl * eta**2, float(np.abs(snap.R).max()), 1e-300)
    rosc = float(np.abs(L).max()) / scale_R
    Tsum = snap.T + eta**2 * _matvec(Gi, pert.Tk)
    mosc_f = inverse_div_Rvex(divergence(VectorField(g, Tsum)))
    scale_T = max(float(np.abs(snap.T).max()), float(np.abs(eta * pert.Tk).max()), 1e-300)
    mosc = float(np.abs(mosc_f.values).max()) / scale_T if scale_T > 1e-300 else 0.0
    divw = float(np.abs(divergence(VectorField(g, pert.w)).values).max())
    wmax = float(np.sqrt(np.sum(pert.w**2, axis=0)).max())
    return {"rosc_rel": rosc, "mosc_rel": mosc, "div_w": divw, "w_sup": wmax,
            "div_w_rel": divw / (blocks.lam * wmax) if wmax > 0 else 0.0,
            "wp_sup": float(np.sqrt(np.sum(pert.wp**2, axis=0)).max()),
            "wc_sup": float(np.sqrt(np.sum(pert.wc**2, axis=0)).max()),
            "w_minus_wp_wc": float(np.abs(pert.w - pert.wp - pert.wc).max()),
            "rv_dist": pert.rv_dist, "eps_v": dirs.eps_v}


def build_perturbation(glued, maps, dirs, blocks, schedule, times=None, check_ball=True):
    """Perturbations at the flow-map sample times, with cancellation checks."""
    delta, ell, alpha = schedule.delta_q1, schedule.ell, schedule.alpha
    out = []
    for (i, t), fm in sorted(maps.maps.items()):
        if times is not None and t not in times:
            continue
        snap = glued.snapshot(t)
        p = perturbation_at(glued, i, t, blocks, dirs, delta, ell, alpha, fmap=fm, snap=snap,
                            check_ball=check_ball)
        if p.eta > 0:
            p.checks = _osc_checks(glued, p, snap, fm, blocks, dirs, delta, ell, alpha)
        out.append(p)
    return out


class NextStage:
    """Stage q+1: (vbar + w, thetabar + d, pbar) with stresses from the new-stress formula.

    R_{q+1} = R(dw/dt + div(vbar (x) w + w (x) vbar + w (x) w) - d e_3 + div Rbar),
    T_{q+1} = R_vex(dd/dt + div(vbar d + w thetabar + w d) + div Tbar),
    with time derivatives of (w, d) by a 5-point central difference of step h.
    """

    def __init__(self, glued, blocks, dirs, schedule, h=None, map_kw=None, check_ball=True):
        self.glued = glued
        self.grid = glued.grid
        self.blocks, self.dirs, self.schedule = blocks, dirs, schedule
        self.h = h if h is not None else glued.tau / 48
        self.map_kw = map_kw or {}
        self.check_ball = check_ball
        self.exact_left = getattr(glued.mollified, "exact_left", None)
        self.exact_right = getattr(glued.mollified, "exact_right", None)
        self.last = {}

    def _active(self, t):
        for i in range(self.glued.i_max):
            a, b = self.glued.eta_support(i)
            if a < t < b:
                return i
        return None

    def _pert(self, i, t, snap=None):
        s = self.schedule
        return perturbation_at(self.glued, i, t, self.blocks, self.dirs, s.delta_q1, s.ell, s.alpha,
                               snap=snap, check_ball=self.check_ball, map_kw=self.map_kw, diag=False)

    def velocity(self, t):
        v = self.glued.velocity(t)
        i = self._active(t)
        if i is None:
            return v
        return v + self._pert(i, t).w

    def snapshot(self, t, with_parts=False):
        g = self.grid
        snap = self.glued.snapshot(t)
        i = self._active(t)
        if i is None:
            self.last = {"t": t, "active": None}
            return snap
        c = [1, -8, 0, 8, -1]
        h = self.h
        P = {}
        for m in (-2, -1, 1, 2):
            P[m] = self._pert(i, t + m * h)
        fm = flow_map(self.glued, i, t, self.glued.t[i], **self.map_kw)
        P[0] = perturbation_at(self.glued, i, t, self.blocks, self.dirs, self.schedule.delta_q1,
                               self.schedule.ell, self.schedule.alpha, fmap=fm, snap=snap,
                               check_ball=self.check_ball)
        dw = sum(c[m + 2] * P[m].w for m in range(-2, 3)) / (12 * h)
        dd = sum(c[m + 2] * P[m].d for m in range(-2, 3)) / (12 * h)
        for m in (-2, -1, 1, 2):
            del P[m]
        w, d = P[0].w, P[0].d
        vb, thb = snap.v, snap.theta
        div_Rbar = divergence(SymMatrixField(g, snap.R, trace_free=True)).values
        buoy = np.zeros_like(w)
        buoy[2] = -d
        trans_v = g.truncate(dw) + _div_outer(g, w, vb)
        nash_v = _div_outer(g, vb, w)
        osc_v = _div_outer(g, w, w) + div_Rbar
        Mv = trans_v + nash_v + osc_v + buoy
        Rn = inverse_div_R(VectorField(g, Mv)).values
        dT_trans = g.truncate(dd) + divergence(VectorField(g, g.mul(vb, d[None]))).values
        dT_nash = divergence(VectorField(g, g.mul(w, thb[None]))).values
        dT_osc = divergence(VectorField(g, g.mul(w, d[None]) + snap.T)).values
        Tn = inverse_div_Rvex(ScalarField(g, dT_trans + dT_nash + dT_osc)).values
        out = Snapshot(t, vb + w, thb + d, snap.p, snap.dv + g.truncate(dw), snap.dtheta + g.truncate(dd),
                       Rn, Tn)
        self.last = {"t": t, "active": i, "pert": P[0], "fmap": fm, "glued": snap}
        if with_parts:
            parts = {
                "R_trans": inverse_div_R(VectorField(g, trans_v + buoy)).values,
                "R_nash": inverse_div_R(VectorField(g, nash_v)).values,
                "R_osc": inverse_div_R(VectorField(g, osc_v)).values,
                "T_trans": inverse_div_Rvex(ScalarField(g, dT_trans)).values,
                "T_nash": inverse_div_Rvex(ScalarField(g, dT_nash)).values,
                "T_osc": inverse_div_Rvex(ScalarField(g, dT_osc)).values,
            }
            self.last["parts"] = parts
        return out


def _div_outer(g, a, b):
    """(div(a (x) b))_i = d_j(a_i b_j) with dealiased products."""
    return np.stack([divergence(VectorField(g, g.mul(a[i][None], b))).values for i in range(3)])


def assemble_next(glued, blocks, dirs, schedule, times, h=None, map_kw=None, check_ball=True):
    """Level q+1 snapshots at the given times with consistency checks.

    For each time the residual of the relaxed system for (v_{q+1}, theta_{q+1}, p_{q+1}),
    computed from the glued time derivative plus the difference quotient of (w, d), is
    compared with div R_{q+1} and div T_{q+1}.
    """
    st = NextStage(glued, blocks, dirs, schedule, h=h, map_kw=map_kw, check_ball=check_ball)
    g = glued.grid
    rows = []
    for t in times:
        s = st.snapshot(t, with_parts=True)
        info = dict(st.last)
        rel = s.relaxed_state(g)
        bare = RelaxedState(t, rel.v, rel.theta, rel.p)
        rv, rt = relaxed_residual(bare, s.dv, s.dtheta, fields=True)
        dR = divergence(SymMatrixField(g, s.R, trace_free=True)).values
        dT = divergence(VectorField(g, s.T)).values
        nv = max(float(np.abs(rv.values).max()), float(np.abs(dR).max()),
                 1e-12 * float(np.abs(s.dv).max()), 1e-300)
        nt = max(float(np.abs(rt.values).max()), float(np.abs(dT).max()),
                 1e-12 * float(np.abs(s.dtheta).max()), 1e-300)
        row = {"t": float(t), "active": info.get("active"),
               "consistency_v": float(np.abs(rv.values - dR).max()) / nv,
               "consistency_theta": float(np.abs(rt.values - dT).max()) / nt,
               "R_next_sup": sup_norm(SymMatrixField(g, s.R, trace_free=True), refine=False),
               "T_next_sup": float(np.sqrt(np.sum(s.T**2, axis=0)).max()),
               "R_bar_sup": sup_norm(SymMatrixField(g, info["glued"].R, trace_free=True), refine=False)
               if info.get("glued") is not None else 0.0,
               "T_bar_sup": float(np.sqrt(np.sum(info["glued"].T**2, axis=0)).max())
               if info.get("glued") is not None else 0.0}
        if info.get("active") is not None:
            p = info["pert"]
            row.update(_osc_checks(glued, p, info["glued"], info["fmap"], blocks, dirs,
                                   schedule.delta_q1, schedule.ell, schedule.alpha))
            row["det_error"] = info["fmap"].det_error()
            row["dist_from_id"] = info["fmap"].dist_from_id()
            for k, v in info["parts"].items():
                row[k + "_sup"] = float(np.abs(v).max())
        rows.append(row)
    return st, rows


@dataclass
class InductiveReport:
    ratios: dict
    passed: dict
    mode: str

    @property
    def ok(self):
        return all(self.passed.values())

    def lines(self):
        for k in sorted(self.ratios):
            yield f"{k}={self.ratios[k]:.17g} pass={int(self.passed[k])}"


def inductive_check(stage_q, stage_q1, schedule, times, mode="desk"):
    """Measured inductive bounds at level q+1 as ratios (value / bound)."""
    s = schedule
    g = stage_q.grid
    lam1 = s.lam_q1
    bound_c0 = sum(math.sqrt(s.delta(j)) for j in range(1, s.q + 2))
    vals = {"C0": 0.0, "C1": 0.0, "stress": 0.0, "increment": 0.0}
    for t in times:
        a = stage_q.snapshot(t)
        b = stage_q1.snapshot(t)
        c0 = max(float(np.sqrt(np.sum(b.v**2, axis=0)).max()), float(np.abs(b.theta).max()))
        c1 = 0.0
        for arr in (b.v, b.theta[None]):
            fh = g.fft(arr)
            for j in range(3):
                c1 = max(c1, float(np.abs(g.ifft(1j * g.kd[j] * fh)).max()))
        st = max(float(np.abs(b.R).max()), float(np.abs(b.T).max()))
        inc = max(float(np.sqrt(np.sum((b.v - a.v) ** 2, axis=0)).max()),
                  float(np.abs(b.theta - a.theta).max()))
        vals["C0"] = max(vals["C0"], c0)
        vals["C1"] = max(vals["C1"], c1)
        vals["stress"] = max(vals["stress"], st)
        vals["increment"] = max(vals["increment"], inc)
    bounds = {"C0": bound_c0, "C1": math.sqrt(s.delta_q1) * lam1,
              "stress": s.delta_q2 * lam1 ** (-3 * s.alpha),
              "increment": math.sqrt(s.delta_q1)}
    ratios = {k: vals[k] / bounds[k] for k in vals}
    passed = {k: ratios[k] <= 1.0 for k in ratios}
    return InductiveReport(ratios=ratios, passed=passed, mode=mode)
