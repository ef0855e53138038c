"""Command-line entry point: simulate, diagnose-flux, construct, verify.

Exit codes: 0 success, 2 configuration error, 3 numerical abort (or a failed
verification suite).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .boussinesq_solver import (BoussinesqState, SolverAbort, LifespanError, CFLError, solve_local,
                                random_state, relaxed_residual, RelaxedState)
from .flux_diagnostics import (energy_balance_residual, lp_balance_residual,
                               lp_balance_residual_small_p, commutator_rQ)
from .littlewood_paley import lp_norm, s_q, _system
from .spectral_core import (TorusGrid, ScalarField, VectorField, SymMatrixField, divergence,
                            inverse_div_R, inverse_div_Rvex, leray_project, read_dump, write_csv,
                            write_dump, random_field)

log = logging.getLogger("boussinesq_ci")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
THREADS_ENV = "BOUSSINESQ_CI_THREADS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


def _get(cfg, key, kind, default=None, required=False, where="config", check=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    val = cfg[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is int and isinstance(val, float) and val.is_integer():
        val = int(val)
    if kind is not None and (not isinstance(val, kind) or isinstance(val, bool) and kind is not bool):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(val).__name__}")
    if kind is float and not math.isfinite(val):
        raise ConfigError(f"{where}.{key}: must be finite")
    if check is not None:
        msg = check(val)
        if msg:
            raise ConfigError(f"{where}.{key}: {msg}")
    return val


def _pos(v):
    return None if v > 0 else "must be positive"


def _even_n(v):
    return None if v >= 8 and v % 2 == 0 else "must be an even integer >= 8"


def _reject_unknown(cfg, allowed, where):
    extra = sorted(set(cfg) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


COMMON = ("n", "seed", "output_dir", "tolerances", "comment")


def _parse_init(cfg, seed):
    init = cfg.get("init")
    if not isinstance(init, dict):
        raise ConfigError("config.init: required object missing")
    kind = _get(init, "kind", str, required=True, where="init")
    if kind == "shear":
        _reject_unknown(init, ("kind", "A", "f"), "init")
        f = _get(init, "f", str, "cos", where="init")
        if f not in ("cos", "sin"):
            raise ConfigError("init.f: must be 'cos' or 'sin'")
        return {"kind": kind, "A": _get(init, "A", float, 1.0, where="init"), "f": f}
    if kind == "random":
        _reject_unknown(init, ("kind", "seed", "amp", "theta_amp", "kmax"), "init")
        return {"kind": kind, "seed": _get(init, "seed", int, seed, where="init"),
                "amp": _get(init, "amp", float, 0.1, where="init", check=_pos),
                "theta_amp": _get(init, "theta_amp", float, 0.1, where="init", check=_pos),
                "kmax": _get(init, "kmax", float, 4.0, where="init", check=_pos)}
    if kind == "file":
        _reject_unknown(init, ("kind", "v", "theta"), "init")
        return {"kind": kind, "v": _get(init, "v", str, required=True, where="init"),
                "theta": _get(init, "theta", str, required=True, where="init")}
    raise ConfigError(f"init.kind: unknown kind '{kind}' (shear, random, file)")


def _tolerances(cfg):
    tol = cfg.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("config.tolerances: expected object")
    for k, v in tol.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"tolerances.{k}: must be a positive number")
    return {k: float(v) for k, v in tol.items()}


def parse_config(sub, cfg):
    """Validate and fill defaults.  Returns the resolved config (written to the manifest)."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    seed = _get(cfg, "seed", int, 0)
    out = {"subcommand": sub, "seed": seed, "tolerances": _tolerances(cfg)}
    if "output_dir" in cfg:
        out["output_dir"] = _get(cfg, "output_dir", str)
    if sub in ("simulate", "diagnose-flux"):
        allowed = COMMON + ("dt", "t_end", "t0", "init", "dump_every", "c_desk", "check_lifespan", "cfl")
        if sub == "diagnose-flux":
            allowed += ("Q", "p", "delta")
        _reject_unknown(cfg, allowed, "config")
        out["n"] = _get(cfg, "n", int, required=True, check=_even_n)
        out["dt"] = _get(cfg, "dt", float, required=True, check=_pos)
        out["t0"] = _get(cfg, "t0", float, 0.0)
        out["t_end"] = _get(cfg, "t_end", float, required=True)
        if not out["t_end"] > out["t0"]:
            raise ConfigError("config.t_end: must exceed t0")
        steps = (out["t_end"] - out["t0"]) / out["dt"]
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1):
            raise ConfigError("config.dt: (t_end - t0) must be an integer multiple of dt")
        out["init"] = _parse_init(cfg, seed)
        out["dump_every"] = _get(cfg, "dump_every", int, 0, check=lambda v: None if v >= 0 else "must be >= 0")
        out["c_desk"] = _get(cfg, "c_desk", float, 0.2, check=_pos)
        out["check_lifespan"] = _get(cfg, "check_lifespan", bool, False)
        out["cfl"] = _get(cfg, "cfl", float, 0.5, check=_pos)
        if sub == "diagnose-flux":
            Q = cfg.get("Q", [2, 3])
            P = cfg.get("p", [1, 2, 4])
            if not isinstance(Q, list) or not Q or not all(isinstance(q, int) and q >= 0 for q in Q):
                raise ConfigError("config.Q: expected a non-empty list of non-negative integers")
            if not isinstance(P, list) or not P or not all(isinstance(p, (int, float)) and p >= 1 for p in P):
                raise ConfigError("config.p: expected a non-empty list of numbers >= 1")
            out["Q"], out["p"] = Q, [float(p) for p in P]
            out["delta"] = _get(cfg, "delta", float, 1e-3, check=_pos)
    elif sub == "construct":
        _reject_unknown(cfg, COMMON + ("schedule", "stage", "solve_n", "dt_per_tau", "block_lam",
                                       "allow_underresolved", "samples_per_interval", "family",
                                       "dump_fields", "mode", "levels"), "config")
        out["n"] = _get(cfg, "n", int, required=True, check=_even_n)
        sc = cfg.get("schedule")
        if not isinstance(sc, dict):
            raise ConfigError("config.schedule: required object missing")
        if "lam_q" in sc:
            _reject_unknown(sc, ("lam_q", "lam_q1", "beta", "alpha", "tau_ratio", "T_tilde"), "schedule")
            out["schedule"] = {"lam_q": _get(sc, "lam_q", int, required=True, where="schedule", check=_pos),
                               "lam_q1": _get(sc, "lam_q1", int, required=True, where="schedule", check=_pos),
                               "tau_ratio": _get(sc, "tau_ratio", float, 3.5, where="schedule", check=_pos)}
        else:
            _reject_unknown(sc, ("a", "b", "beta", "alpha", "T_tilde"), "schedule")
            out["schedule"] = {"a": _get(sc, "a", float, required=True, where="schedule"),
                               "b": _get(sc, "b", float, required=True, where="schedule"),
                               "T_tilde": _get(sc, "T_tilde", float, 0.25, where="schedule", check=_pos)}
        out["schedule"]["beta"] = _get(sc, "beta", float, required=True, where="schedule", check=_pos)
        out["schedule"]["alpha"] = _get(sc, "alpha", float, required=True, where="schedule", check=_pos)
        st = cfg.get("stage", {"kind": "two_flow", "A": 0.01})
        if not isinstance(st, dict):
            raise ConfigError("config.stage: expected object")
        kind = _get(st, "kind", str, required=True, where="stage")
        if kind == "two_flow":
            _reject_unknown(st, ("kind", "A"), "stage")
            out["stage"] = {"kind": kind, "A": _get(st, "A", float, 0.01, where="stage")}
        elif kind == "random":
            _reject_unknown(st, ("kind", "seed", "amp", "theta_amp"), "stage")
            out["stage"] = {"kind": kind, "seed": _get(st, "seed", int, seed, where="stage"),
                            "amp": _get(st, "amp", float, 0.05, where="stage", check=_pos),
                            "theta_amp": _get(st, "theta_amp", float, 0.05, where="stage", check=_pos)}
        else:
            raise ConfigError(f"stage.kind: unknown kind '{kind}' (two_flow, random)")
        out["solve_n"] = _get(cfg, "solve_n", int, 32, check=_even_n)
        out["dt_per_tau"] = _get(cfg, "dt_per_tau", int, 24, check=lambda v: None if v >= 8 else "must be >= 8")
        out["block_lam"] = _get(cfg, "block_lam", int, None, check=_pos)
        out["allow_underresolved"] = _get(cfg, "allow_underresolved", bool, True)
        out["samples_per_interval"] = _get(cfg, "samples_per_interval", int, 1, check=_pos)
        out["family"] = _get(cfg, "family", str, "pythag5")
        if out["family"] not in ("pythag5", "pythag3"):
            raise ConfigError("config.family: must be 'pythag5' or 'pythag3'")
        out["dump_fields"] = _get(cfg, "dump_fields", bool, True)
        out["mode"] = _get(cfg, "mode", str, "desk")
        out["levels"] = _get(cfg, "levels", int, 1, check=_pos)
    elif sub == "verify":
        _reject_unknown(cfg, COMMON + ("count",), "config")
        out["n"] = _get(cfg, "n", int, 16, check=_even_n)
        out["count"] = _get(cfg, "count", int, 5, check=_pos)
    else:
        raise ConfigError(f"unknown subcommand {sub}")
    return out


# ---------------------------------------------------------------- outputs


class RunContext:
    def __init__(self, sub, cfg, out_dir, argv):
        self.sub = sub
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.argv = list(argv)
        self.files = []
        self.summary = {}
        self.t0 = time.time()

    def path(self, name):
        p = self.out / name
        self.files.append(name)
        return p

    def dump(self, name, field):
        write_dump(self.path(name), field)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)

    def manifest(self, status, extra=None):
        files = {}
        for name in sorted(set(self.files)):
            p = self.out / name
            if p.exists():
                files[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        m = {
            "subcommand": self.sub,
            "argv": self.argv,
            "config": self.cfg,
            "status": status,
            "exit_code": {"ok": EXIT_OK, "config_error": EXIT_CONFIG}.get(status, EXIT_NUMERIC),
            "summary": self.summary,
            "versions": {"boussinesq_ci": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "threads": os.environ.get(THREADS_ENV),
            "platform": platform.platform(),
            "wall_seconds": time.time() - self.t0,
            "files": files,
        }
        if extra:
            m.update(extra)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(m, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _init_state(grid, cfg):
    ini = cfg["init"]
    t0 = cfg["t0"]
    if ini["kind"] == "shear":
        x1 = grid.coords[0]
        prof = np.cos(2 * np.pi * x1) if ini["f"] == "cos" else np.sin(2 * np.pi * x1)
        v = np.zeros((3,) + grid.shape)
        v[2] = ini["A"] * prof * t0
        return BoussinesqState(t0, VectorField(grid, v), ScalarField(grid, ini["A"] * prof))
    if ini["kind"] == "random":
        return random_state(grid, seed=ini["seed"], c1=ini["amp"], theta_amp=ini["theta_amp"],
                            kmax=ini["kmax"], t=t0)
    try:
        v = read_dump(ini["v"])
        th = read_dump(ini["theta"])
    except OSError as e:
        raise ConfigError(f"init: cannot read dump: {e}") from e
    if not isinstance(v, VectorField) or not isinstance(th, ScalarField):
        raise ConfigError("init: v must be a 3-component dump and theta a scalar dump")
    if v.grid.n != grid.n or th.grid.n != grid.n:
        raise ConfigError(f"init: dumps have n = {v.grid.n}/{th.grid.n}, config n = {grid.n}")
    return BoussinesqState(t0, VectorField(grid, v.values), ScalarField(grid, th.values))


def _norm_rows(traj):
    g = traj.grid
    for i, t in enumerate(traj.times):
        v, th = traj._v[i], traj._th[i]
        yield (float(t), float(np.mean(np.sum(v**2, axis=0))),
               float(np.sqrt(np.sum(v**2, axis=0)).max()),
               lp_norm(th, 1), lp_norm(th, 2), lp_norm(th, 4), lp_norm(th, math.inf),
               float(np.abs(divergence(VectorField(g, v)).values).max()))


NORM_HEADER = ["t", "v_l2sq", "v_max", "theta_L1", "theta_L2", "theta_L4", "theta_max", "div_max"]


def _simulate_traj(cfg):
    g = TorusGrid(cfg["n"])
    init = _init_state(g, cfg)
    return solve_local(init, cfg["t_end"], cfg["dt"], c_desk=cfg["c_desk"],
                       check_lifespan=cfg["check_lifespan"], cfl=cfg["cfl"])


def run_simulate(ctx):
    cfg = ctx.cfg
    traj = _simulate_traj(cfg)
    rows = list(_norm_rows(traj))
    ctx.csv("norms.csv", NORM_HEADER, rows)
    every = cfg["dump_every"]
    idx = sorted({0, len(traj) - 1} | (set(range(0, len(traj), every)) if every else set()))
    for i in idx:
        st = traj.state(i, with_pressure=False)
        ctx.dump(f"v_{i:06d}.bin", st.v)
        ctx.dump(f"theta_{i:06d}.bin", st.theta)
    r0 = rows[0]
    drift = {f"theta_L{p}": max(abs(r[k] - r0[k]) for r in rows) / max(r0[k], 1e-300)
             for p, k in (("1", 3), ("2", 4), ("4", 5), ("max", 6))}
    ctx.summary.update({"steps": len(traj) - 1, "div_max": traj.meta["div_max"],
                        "energy_balance_residual": energy_balance_residual(traj),
                        "theta_drift_rel": drift})
    if cfg["init"]["kind"] == "shear":
        A = cfg["init"]["A"]
        err = max(abs(r[1] - A * A * r[0] ** 2 / 2) for r in rows)
        ctx.summary["shear_l2_error"] = err
    return EXIT_OK


def run_diagnose(ctx):
    cfg = ctx.cfg
    traj = _simulate_traj(cfg)
    ctx.csv("norms.csv", NORM_HEADER, list(_norm_rows(traj)))
    reports = {}
    for p in cfg["p"]:
        for Q in cfg["Q"]:
            rep = (lp_balance_residual(traj, p, Q) if p >= 2
                   else lp_balance_residual_small_p(traj, p, cfg["delta"], Q))
            tag = f"p{p:g}_Q{Q}"
            rep.to_csv(ctx.path(f"flux_{tag}.csv"))
            reports[tag] = {"balance_residual": rep.balance_residual, "max_C": rep.max_C}
    ctx.summary.update({"flux": reports, "energy_balance_residual": energy_balance_residual(traj)})
    return EXIT_OK


# ---------------------------------------------------------------- construct


def _schedule(cfg, mode, q=1):
    from .convex_integration import desk_schedule, schedule_params
    from .convex_integration.geometry import default_directions, measure_M
    sc = cfg["schedule"]
    M = measure_M(default_directions(cfg["family"]), samples=200, seed=cfg["seed"])
    if "lam_q" in sc:
        s = desk_schedule(sc["lam_q"], sc["lam_q1"], sc["beta"], sc["alpha"], q=1, M=M,
                          tau_ratio=sc["tau_ratio"], mode=mode)
        if q != 1:
            s = schedule_params(s.a, s.b, s.beta, s.alpha, s.T_tilde, q, mode, M)
        return s
    return schedule_params(sc["a"], sc["b"], sc["beta"], sc["alpha"], sc["T_tilde"], q, mode, M)


def _base_stage(cfg, sch):
    from .convex_integration import (ExactFlowStage, ShearExact, TrajectoryExact, TwoFlowStage,
                                     ZeroExact)
    g = TorusGrid(cfg["n"])
    tau, Tt = sch.tau, sch.T_tilde
    st = cfg["stage"]
    if st["kind"] == "two_flow":
        return TwoFlowStage(ShearExact(g, st["A"]), ZeroExact(g), 2 * Tt + tau, 3 * Tt - 2 * tau)
    gs = TorusGrid(cfg["solve_n"])
    dt = tau / cfg["dt_per_tau"]
    t_start = 2 * Tt - tau
    t_stop = t_start + dt * math.ceil((Tt + 2 * tau) / dt)
    init = random_state(gs, seed=st["seed"], c1=st["amp"], theta_amp=st["theta_amp"], t=t_start)
    traj = solve_local(init, t_stop, dt, check_lifespan=False)
    return ExactFlowStage(TrajectoryExact(traj, grid=g))


def run_construct(ctx):
    from .convex_integration import (build_blocks, build_glued, default_directions, inductive_check,
                                     mollify_stage, assemble_next)
    cfg = ctx.cfg
    mode, levels = cfg["mode"], cfg["levels"]
    sch = _schedule(cfg, mode, 1)
    stage = _base_stage(cfg, sch)
    dirs = default_directions(cfg["family"])
    report_lines = []
    all_rows = []
    for lev in range(levels):
        q = lev + 1
        if lev:
            sch = _schedule(cfg, mode, q)
        ctx.summary[f"schedule_q{q}"] = sch.as_dict()
        dt = sch.tau / cfg["dt_per_tau"]
        glued = build_glued(mollify_stage(stage, sch.ell), sch.tau, sch.T_tilde, dt,
                            solve_n=cfg["solve_n"])
        lam = cfg["block_lam"] if cfg["block_lam"] is not None else sch.lam_q1
        blocks = build_blocks(dirs=dirs, lam=lam, grid=glued.grid, lam1=sch.lam_q1,
                              allow_underresolved=cfg["allow_underresolved"])
        times = []
        k = cfg["samples_per_interval"]
        for i in range(glued.i_max):
            a, b = glued.I(i)
            times += [a + (b - a) * (j + 0.5) / k for j in range(k)]
        nxt, rows = assemble_next(glued, blocks, dirs, sch, times, h=dt)
        for r in rows:
            r["level"] = q
        all_rows += rows
        rep = inductive_check(stage, nxt, sch, times, mode=mode)
        report_lines += [f"q={q} {line}" for line in rep.lines()]
        ratio = max(r["R_next_sup"] for r in rows) / max(max(r["R_bar_sup"] for r in rows), 1e-300)
        report_lines.append(f"q={q} stress_ratio={ratio:.17g}")
        report_lines += [f"q={q} constraint[{c.name}]={int(c.ok)}" for c in sch.constraints]
        report_lines.append(f"q={q} blocks_underresolved={int(blocks.underresolved)} "
                            f"required_n={blocks.required_n}")
        ctx.summary[f"level_{q}"] = {"stress_ratio": ratio, "inductive": rep.ratios,
                                     "inductive_pass": rep.ok, "i_max": glued.i_max,
                                     "blocks_required_n": blocks.required_n}
        if cfg["dump_fields"]:
            for j, t in enumerate(times):
                s = nxt.snapshot(t)
                g = glued.grid
                ctx.dump(f"q{q}_t{j:03d}_v.bin", VectorField(g, s.v))
                ctx.dump(f"q{q}_t{j:03d}_theta.bin", ScalarField(g, s.theta))
                ctx.dump(f"q{q}_t{j:03d}_R.bin", SymMatrixField(g, s.R))
                ctx.dump(f"q{q}_t{j:03d}_T.bin", VectorField(g, s.T))
        stage = nxt
    keys = sorted({k for r in all_rows for k in r if k not in ("level", "t", "active")})
    ctx.csv("stress_norms.csv", ["level", "t", "active"] + keys,
            [[r["level"], r["t"], r["active"]] + [r.get(k, "") for k in keys] for r in all_rows])
    with open(ctx.path("inductive_report.txt"), "w") as fh:
        fh.write("\n".join(report_lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- verify


def _verify_suites(cfg):
    from .convex_integration import (TwoFlowStage, ZeroExact, build_glued, flow_map, geometric_coeffs,
                                     mollify_stage, default_directions, stage_residual)
    n, count = cfg["n"], cfg["count"]
    g = TorusGrid(n)
    rng = np.random.default_rng(cfg["seed"])
    res = {}

    worst = 0.0
    for _ in range(count):
        u = random_field(g, "vector", rng)
        f = random_field(g, "scalar", rng)
        R = inverse_div_R(u)
        e1 = np.abs(divergence(R).values - (u.values - u.values.mean(axis=(1, 2, 3), keepdims=True))).max()
        e2 = np.abs(divergence(inverse_div_Rvex(f)).values - (f.values - f.values.mean())).max()
        P = leray_project(u)
        e3 = np.abs(leray_project(P).values - P.values).max()
        worst = max(worst, e1 / np.abs(u.values).max(), e2 / np.abs(f.values).max(),
                    e3 / np.abs(u.values).max())
    res["operator_identities"] = (worst, worst <= 1e-12)
    pe = _system(g).partition_error()
    res["lp_partition"] = (pe, pe <= 1e-12)
    v, th = random_field(g, "vector", rng), random_field(g, "scalar", rng)
    Q = 1
    lhs = s_q(VectorField(g, g.mul(v.values, th.values[None])), Q).values
    sv, st = s_q(v, Q), s_q(th, Q)
    rhs = (commutator_rQ(v, th, Q).values - g.mul((v - sv).values, (th - st).values[None])
           + g.mul(sv.values, st.values[None]))
    de = float(np.abs(lhs - rhs).max() / max(np.abs(lhs).max(), 1e-300))
    res["decomposition_identity"] = (de, de <= 1e-12)
    a = geometric_coeffs(np.eye(3))
    dirs = default_directions()
    rec = sum(a[k] ** 2 * np.outer(f.vec("kbar"), f.vec("kbar")) for k, f in enumerate(dirs.v_frames))
    ge = float(np.abs(rec - np.eye(3)).max())
    res["geometric_lemma_identity"] = (ge, ge <= 1e-12)

    A, t0 = 0.7, 0.2
    x1 = g.coords[0]
    vv = np.zeros((3,) + g.shape)
    vv[2] = A * np.cos(2 * np.pi * x1) * t0
    st0 = BoussinesqState(t0, VectorField(g, vv), ScalarField(g, A * np.cos(2 * np.pi * x1)))
    tr = solve_local(st0, t0 + 0.05, 0.005, check_lifespan=False)
    vl2 = np.mean(np.sum(tr._v[-1] ** 2, axis=0))
    se = float(abs(vl2 - A * A * tr.times[-1] ** 2 / 2))
    res["shear_exactness"] = (se, se <= 1e-10)

    z = TwoFlowStage(ZeroExact(g), ZeroExact(g), 0.6, 0.65)
    gl = build_glued(mollify_stage(z, 4 * g.h), 0.05, 0.25, 0.005, check_lifespan=False)
    gz = max(max(np.abs(s.R).max(), np.abs(s.T).max(), *stage_residual(g, s))
             for s in (gl.snapshot(t) for t in (0.55, 0.6, 0.62, 0.7)))
    res["trivial_gluing"] = (float(gz), gz == 0.0)

    class _Const:
        grid = g

        def velocity(self, t):
            w = np.zeros((3,) + g.shape)
            w[0], w[1] = 0.3, -0.2
            return w

    m = flow_map(_Const(), 0, 0.5, 0.4)
    ce = float(np.abs(m.D - np.array([-0.03, 0.02, 0.0]).reshape(3, 1, 1, 1)).max())
    res["flow_map_constant_velocity"] = (ce, ce <= 1e-10)

    rs = RelaxedState(0.0, VectorField.zeros(g), ScalarField.zeros(g))
    zr = max(relaxed_residual(rs, np.zeros((3,) + g.shape), np.zeros(g.shape)))
    res["zero_state_residual"] = (zr, zr == 0.0)
    return res


def run_verify(ctx):
    res = _verify_suites(ctx.cfg)
    rows = [(k, v, "PASS" if ok else "FAIL") for k, (v, ok) in res.items()]
    ctx.csv("verify.csv", ["suite", "value", "status"], rows)
    with open(ctx.path("summary.txt"), "w") as fh:
        for k, v, s in rows:
            fh.write(f"{s} {k} value={v:.17g}\n")
    ctx.summary["suites"] = {k: {"value": v, "pass": ok} for k, (v, ok) in res.items()}
    return EXIT_OK if all(ok for _, ok in res.values()) else EXIT_NUMERIC


# ---------------------------------------------------------------- main


RUNNERS = {"simulate": run_simulate, "diagnose-flux": run_diagnose, "construct": run_construct,
           "verify": run_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="boussinesq-ci", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=(name != "verify"), help="JSON configuration file")
        sp.add_argument("--out", help="output directory (overrides config.output_dir)")
        if name == "construct":
            sp.add_argument("--mode", choices=("desk", "paper-strict"))
            sp.add_argument("--levels", type=int)
    return p


def _threads():
    val = os.environ.get(THREADS_ENV)
    if val is None:
        return None
    try:
        k = int(val)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got '{val}'") from None
    if k < 1:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got '{val}'")
    return k


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    sub = args.subcommand
    ctx = None
    try:
        threads = _threads()
        raw = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    raw = json.load(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config: {e}") from e
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from e
        if sub == "construct":
            raw = dict(raw)
            if args.mode:
                raw["mode"] = args.mode
            if args.levels is not None:
                raw["levels"] = args.levels
        cfg = parse_config(sub, raw)
        if sub == "construct" and cfg["mode"] not in ("desk", "paper-strict"):
            raise ConfigError("config.mode: must be 'desk' or 'paper-strict'")
        out_dir = args.out or cfg.get("output_dir") or f"run_{sub}"
        cfg["output_dir"] = str(out_dir)
        ctx = RunContext(sub, cfg, out_dir, ["boussinesq-ci"] + argv)
        if threads is not None:
            _apply_threads(threads)
        code = RUNNERS[sub](ctx)
        ctx.manifest("ok" if code == EXIT_OK else "failed")
        log.info("%s finished with exit code %d; outputs in %s", sub, code, out_dir)
        return code
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        if ctx is not None:
            ctx.manifest("config_error", {"error": str(e)})
        return EXIT_CONFIG
    except Exception as e:  # numerical aborts carry a payload
        from .convex_integration import (GeometryError, PerturbationError, ResolutionError,
                                         ScheduleError, StageError)
        if isinstance(e, ScheduleError) or (isinstance(e, ValueError) and not isinstance(
                e, (LifespanError, CFLError, GeometryError, ResolutionError))):
            print(f"config error: {e}", file=sys.stderr)
            if ctx is not None:
                ctx.manifest("config_error", {"error": str(e)})
            return EXIT_CONFIG
        numeric = (SolverAbort, LifespanError, CFLError, GeometryError, ResolutionError,
                   PerturbationError, StageError, FloatingPointError)
        if not isinstance(e, numeric):
            raise
        payload = getattr(e, "payload", None)
        print(f"numerical abort: {type(e).__name__}: {e}", file=sys.stderr)
        if payload:
            print(json.dumps(payload, default=_json_default), file=sys.stderr)
        if ctx is not None:
            ctx.manifest("numerical_abort", {"error": f"{type(e).__name__}: {e}", "payload": payload})
        return EXIT_NUMERIC


def _apply_threads(k):
    """Cap BLAS/OpenMP pools; FFTs in numpy are single threaded."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(k)


if __name__ == "__main__":
    sys.exit(main())
