"""Acceptance criteria 1-8.

Each test records a single PASS/FAIL line (printed inline and again in the
terminal summary) and then asserts the criterion as stated.  Where a criterion
cannot be met at desk scale the line carries the measured values.
"""
import math
import resource
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES

from boussinesq_ci.boussinesq_solver import (random_state, resample, shear_flow, solve_local,
                                             trajectory_residuals)
from boussinesq_ci.convex_integration import (ShearExact, TrajectoryExact, TwoFlowStage, ZeroExact,
                                              assemble_next, build_blocks, build_glued,
                                              default_directions, desk_schedule, geometric_coeffs,
                                              measure_M, mollify_stage, solve_flow_maps)
from boussinesq_ci.convex_integration.gluing import stage_residual
from boussinesq_ci.flux_diagnostics import (commutator_rQ, energy_balance_residual,
                                            fit_log2_slope, lacunary_field)
from boussinesq_ci.littlewood_paley import (_system, besov_sequence, k_kernel_convolve, lp_norm,
                                            s_q)
from boussinesq_ci.spectral_core import (ScalarField, TorusGrid, VectorField, divergence,
                                         inverse_div_R, inverse_div_Rvex, leray_project,
                                         random_field, sup_norm)


def record(capsys, n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    return ok


def _rel(a, b):
    return float(np.abs(a - b).max()) / max(float(np.abs(b).max()), 1e-300)


def test_criterion_1_operator_identities(capsys):
    t0 = time.time()
    g = TorusGrid(32)
    rng = np.random.default_rng(2024)
    worst = dict.fromkeys(("div_R", "div_RF", "leray", "partition", "decomposition"), 0.0)
    ds = _system(g)
    for _ in range(50):
        u = random_field(g, "vector", rng, kmax=8, mean=0.3)
        f = random_field(g, "scalar", rng, kmax=8, mean=-0.2)
        um = u.values - u.values.mean(axis=(1, 2, 3), keepdims=True)
        worst["div_R"] = max(worst["div_R"], _rel(divergence(inverse_div_R(u)).values, um))
        worst["div_RF"] = max(worst["div_RF"],
                              _rel(divergence(inverse_div_Rvex(f)).values, f.values - f.values.mean()))
        P = leray_project(u)
        worst["leray"] = max(worst["leray"], _rel(leray_project(P).values, P.values))
        blocks = sum(g.ifft(g.fft(f.values) * ds.multiplier(j)) for j in range(-1, ds.j_top + 1))
        worst["partition"] = max(worst["partition"], _rel(blocks, f.values))
        for Q in (1, 2, 3):
            lhs = s_q(VectorField(g, g.mul(u.values, f.values[None])), Q).values
            su, sf = s_q(u, Q), s_q(f, Q)
            rhs = (commutator_rQ(u, f, Q).values
                   - g.mul((u - su).values, (f - sf).values[None]) + g.mul(su.values, sf.values[None]))
            worst["decomposition"] = max(worst["decomposition"], _rel(lhs, rhs))
    dt = time.time() - t0
    ok = max(worst.values()) <= 1e-12 and dt < 30
    record(capsys, 1, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f" time={dt:.1f}s")
    assert ok


def test_criterion_2_conservation(capsys):
    # worst case over five seeds; theta_amp = 1 drives ||v||_1 from 0.1 to about 0.9
    t0 = time.time()
    g = TorusGrid(32)
    drift = dict.fromkeys((1, 2, 4, math.inf), 0.0)
    refined = ebr = ebr_simpson = l1_fine = 0.0
    for seed in range(1, 6):
        init = random_state(g, seed=seed, c1=0.1, theta_amp=1.0)
        tr = solve_local(init, 0.1, 1e-3, check_lifespan=False)
        th = [s[2] for s in tr.samples()]
        for p in drift:
            vals = np.array([lp_norm(x, p) for x in th])
            drift[p] = max(drift[p], float(np.abs(vals - vals[0]).max() / vals[0]))
        fine = [resample(x, TorusGrid(128)) for x in (th[0], th[-1])]
        l1_fine = max(l1_fine, abs(lp_norm(fine[1], 1) - lp_norm(fine[0], 1)) / lp_norm(fine[0], 1))
        s0, s1 = sup_norm(th[0]), sup_norm(th[-1])
        refined = max(refined, abs(s1 - s0) / s0)
        e0 = float(np.mean(np.sum(init.v.values**2, axis=0)))
        ebr = max(ebr, energy_balance_residual(tr) / e0)
        ebr_simpson = max(ebr_simpson, energy_balance_residual(tr, quadrature="simpson") / e0)
    dt = time.time() - t0
    ok = max(drift.values()) <= 1e-6 and ebr <= 1e-6 and dt < 120
    record(capsys, 2, ok,
           f"seeds 1-5 drift L1={drift[1]:.2e} L2={drift[2]:.2e} L4={drift[4]:.2e} "
           f"grid-max={drift[math.inf]:.2e} (endpoint drift: L1 on 4x grid {l1_fine:.2e}, refined sup "
           f"{refined:.2e}) "
           f"energy_residual_rel={ebr:.2e} (simpson {ebr_simpson:.2e}) time={dt:.1f}s")
    assert ok


def test_criterion_3_shear_exactness(capsys):
    t0 = time.time()
    g = TorusGrid(32)
    A = 2.0
    tr = solve_local(shear_flow(g, A, 0.0), 0.5, 0.005, check_lifespan=False, blowup_floor=100.0)
    res = float(trajectory_residuals(tr).max())
    e = np.array([float(np.mean(np.sum(v.values**2, axis=0))) for _, v, _ in tr.samples()])
    # int f^2 = 1/2 for f = cos(2 pi x_1)
    err = float(np.abs(e - A**2 * tr.times**2 / 2).max())
    dt = time.time() - t0
    ok = res <= 1e-10 and err <= 1e-10 and dt < 10
    record(capsys, 3, ok, f"residual={res:.2e} energy_err={err:.2e} time={dt:.1f}s")
    assert ok


def test_criterion_4_onsager_diagnostic(capsys):
    t0 = time.time()
    g = TorusGrid(128)
    jmax = _system(g).j_max
    slopes, kd = {}, {}
    for beta in (0.25, 0.40):
        seq = besov_sequence(lacunary_field(g, beta), math.inf)
        js = [j for j in seq.j if 3 <= j <= jmax]
        slopes[beta] = fit_log2_slope(js, [seq[j] for j in js])
        d = (np.asarray(seq.j), np.asarray([seq[j] for j in seq.j]))
        kd[beta] = (k_kernel_convolve(d, jmax // 2), k_kernel_convolve(d, jmax))
    dt = time.time() - t0
    slope_ok = all(abs(slopes[b] - (1 / 3 - b)) <= 0.05 for b in slopes)
    sign_ok = slopes[0.25] > 0 > slopes[0.40]
    ratio = kd[0.40][1] / kd[0.40][0]
    ok = slope_ok and sign_ok and ratio <= 0.5 and dt < 60
    record(capsys, 4, ok,
           f"j_max={jmax} slope(0.25)={slopes[0.25]:.4f} slope(0.40)={slopes[0.40]:.4f} "
           f"K*d(j_max)/K*d(j_max/2)={kd[0.40][1]:.4g}/{kd[0.40][0]:.4g}={ratio:.3f} (need <=0.5) "
           f"time={dt:.1f}s")
    assert ok


def test_criterion_5_geometric_lemma(capsys):
    t0 = time.time()
    dirs = default_directions()
    rng = np.random.default_rng(5)
    worst = 0.0
    kb = [np.outer(f.vec("kbar"), f.vec("kbar")) for f in dirs.v_frames]
    for _ in range(100):
        E = rng.standard_normal((3, 3))
        E = E + E.T
        E *= dirs.eps_v / 2 * rng.uniform() ** (1 / 6) / np.linalg.norm(E)
        R = np.eye(3) + E
        a = geometric_coeffs(R, dirs)
        worst = max(worst, float(np.abs(sum(a[k] ** 2 * kb[k] for k in range(6)) - R).max()))
    Ms = [measure_M(dirs, radius=dirs.eps_v / 2, samples=400, seed=s) for s in range(4)]
    M_full = measure_M(dirs, radius=dirs.eps_v, samples=400, seed=0)
    spread = (max(Ms) - min(Ms)) / min(Ms)
    dt = time.time() - t0
    ok = worst <= 1e-10 and all(np.isfinite(Ms)) and spread < 0.05 and np.isfinite(M_full) and dt < 5
    record(capsys, 5, ok, f"residual={worst:.2e} M(half-ball)={min(Ms):.4g}..{max(Ms):.4g} "
                          f"M(ball)={M_full:.4g} time={dt:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def two_flow_toy():
    """Two random exact flows blended in time, mollified, and glued at n = 32."""
    t0 = time.time()
    g = TorusGrid(32)
    tau, Tt = 0.02, 0.05
    dt = tau / 20
    a0, a1 = 2 * Tt - tau, 3 * Tt + tau
    trs = [solve_local(random_state(g, seed=s, c1=0.1, theta_amp=0.1, t=a0), a1, dt) for s in (1, 2)]
    st = TwoFlowStage(TrajectoryExact(trs[0]), TrajectoryExact(trs[1]), 2 * Tt + tau / 3,
                      2 * Tt + 1.5 * tau)
    gl = build_glued(mollify_stage(st, 0.08), tau, Tt, dt)
    return gl, time.time() - t0


def test_criterion_6_gluing(capsys, two_flow_toy):
    gl, build_t = two_flow_toy
    t0 = time.time()
    g = gl.grid
    step = gl.tau / 20
    ts = np.round(np.arange(gl.t[0], gl.t[-1] + 1e-12, step) / step) * step
    wJ = wres = wI = 0.0
    for t in ts:
        s = gl.snapshot(t)
        kind, _ = gl.region(t)
        wres = max(wres, *stage_residual(g, s))
        m = max(float(np.abs(s.R).max()), float(np.abs(s.T).max()))
        if kind == "J":
            wJ = max(wJ, m)
        else:
            wI = max(wI, m)
    dt = build_t + time.time() - t0
    ok = wJ <= 1e-9 and wres <= 1e-7 and wI > 0 and dt < 180
    record(capsys, 6, ok, f"sup_J stress={wJ:.2e} residual={wres:.2e} (stress on I up to {wI:.3g}) "
                          f"time={dt:.1f}s")
    assert ok


def test_criterion_8_flow_maps(capsys, two_flow_toy):
    gl, _ = two_flow_toy
    t0 = time.time()
    fm = solve_flow_maps(gl, samples=5)
    bb = build_blocks(lam1=16, grid=gl.grid, allow_underresolved=True)
    overlap = max(bb.overlap_max(m.Phi) for m in fm.maps.values())
    det, dist = fm.det_error(), fm.dist_from_id()
    dt = time.time() - t0
    ok = det <= 1e-6 and dist <= 0.1 and overlap == 0.0 and bb.min_slack > 0 and dt < 120
    record(capsys, 8, ok, f"det_error={det:.2e} dist_from_id={dist:.2e} overlap={overlap:.1e} "
                          f"slack={bb.min_slack:.3g} time={dt:.1f}s")
    assert ok


def _proxy_step(n, lam1):
    sch = desk_schedule(16, lam1, 0.25, 0.05, tau_ratio=3.5)
    g = TorusGrid(n)
    tau, Tt = sch.tau, sch.T_tilde
    stage = TwoFlowStage(ShearExact(g, 0.01), ZeroExact(g), 2 * Tt + tau, 3 * Tt - 2 * tau)
    dt = tau / 24
    gl = build_glued(mollify_stage(stage, sch.ell), tau, Tt, dt, solve_n=32)
    dirs = default_directions()
    bb = build_blocks(dirs=dirs, lam=1, grid=g, allow_underresolved=True)
    ts = [0.5 * sum(gl.I(i)) for i in range(gl.i_max)]
    _, rows = assemble_next(gl, bb, dirs, sch, ts, h=dt)
    return rows


def test_criterion_7_convex_integration_step(capsys):
    t0 = time.time()
    n = 72
    out = {}
    for lam1 in (64, 128):
        rows = _proxy_step(n, lam1)
        act = [r for r in rows if r["active"] is not None]
        out[lam1] = {
            "div": max(r["div_w_rel"] for r in act),
            "osc": max(max(r["rosc_rel"], r["mosc_rel"]) for r in act),
            "cons": max(max(r["consistency_v"], r["consistency_theta"]) for r in rows),
            "ratio": max(r["R_next_sup"] for r in rows) / max(r["R_bar_sup"] for r in rows),
        }
    dt = time.time() - t0
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    a = all(o["div"] <= 1e-10 for o in out.values())
    b = all(o["osc"] <= 1e-8 for o in out.values())
    c = all(o["cons"] <= 1e-8 for o in out.values())
    d = out[64]["ratio"] < 1 and out[128]["ratio"] < out[64]["ratio"]
    # n = 192 as stated: one snapshot at n = 96 took ~60 s and ~1.5 GB, so n = 192
    # needs ~12 GB and well over 20 minutes; this run is an n = 72 proxy
    literal = False
    ok = a and b and c and d and literal
    record(capsys, 7, ok,
           f"n={n} proxy (n=192 infeasible: ~12 GB est.) "
           f"(a) div_w_rel={max(o['div'] for o in out.values()):.2e} {'ok' if a else 'FAIL'} "
           f"(b) osc_rel={max(o['osc'] for o in out.values()):.2e} {'ok' if b else 'FAIL'} "
           f"(c) consistency={max(o['cons'] for o in out.values()):.2e} {'ok' if c else 'FAIL'} "
           f"(d) R_next/R_bar lam64={out[64]['ratio']:.3g} lam128={out[128]['ratio']:.3g} "
           f"{'ok' if d else 'FAIL'} time={dt:.0f}s maxrss={rss:.0f}MB")
    assert ok
