import csv
import json

import numpy as np
import pytest

from boussinesq_ci.cli import main


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _sim_cfg(**kw):
    cfg = {"n": 16, "dt": 0.01, "t_end": 0.1, "init": {"kind": "shear", "A": 2.0}, "seed": 3}
    cfg.update(kw)
    return cfg


def test_simulate_shear_csv(tmp_path):
    out = tmp_path / "run"
    code = main(["simulate", "--config", _write(tmp_path, _sim_cfg()), "--out", str(out)])
    assert code == 0
    with open(out / "norms.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 11
    for r in rows:
        t = float(r["t"])
        assert abs(float(r["v_l2sq"]) - 2.0 * t * t) < 1e-10
    # floats carry 17 significant digits
    for r in rows:
        for v in r.values():
            assert v == f"{float(v):.17g}"
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["exit_code"] == 0
    assert "norms.csv" in man["files"]
    assert man["config"]["n"] == 16 and man["config"]["cfl"] == 0.5
    assert man["summary"]["shear_l2_error"] < 1e-10


def test_same_seed_same_bytes(tmp_path):
    cfg = _sim_cfg(init={"kind": "random", "amp": 0.05}, t_end=0.02, dt=0.005, seed=11)
    hashes = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
        man = json.loads((out / "manifest.json").read_text())
        hashes.append(man["files"])
    assert hashes[0] == hashes[1]
    cfg["seed"] = 12
    out = tmp_path / "r2"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    other = json.loads((out / "manifest.json").read_text())["files"]
    assert other["v_000000.bin"] != hashes[0]["v_000000.bin"]


@pytest.mark.parametrize("cfg", [
    _sim_cfg(n=15),
    _sim_cfg(dt=0.03),
    _sim_cfg(bogus=1),
    _sim_cfg(init={"kind": "vortex"}),
    {"n": 16, "dt": 0.01},
])
def test_config_errors_exit_2(tmp_path, cfg, capsys):
    out = tmp_path / "bad"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 2
    assert "config error" in capsys.readouterr().err


def test_invalid_json_exit_2(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_numerical_abort_exit_3(tmp_path, capsys):
    # dt far above the CFL limit
    cfg = _sim_cfg(init={"kind": "shear", "A": 50.0}, t0=1.0, t_end=1.5, dt=0.5)
    out = tmp_path / "abort"
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "numerical_abort" and man["exit_code"] == 3


def test_construct_strict_mode_rejected(tmp_path):
    cfg = {"n": 72, "schedule": {"lam_q": 16, "lam_q1": 64, "beta": 0.25, "alpha": 0.05}}
    out = tmp_path / "c"
    assert main(["construct", "--config", _write(tmp_path, cfg), "--out", str(out),
                 "--mode", "paper-strict"]) == 2


def test_verify_runs(tmp_path, monkeypatch):
    monkeypatch.setenv("BOUSSINESQ_CI_THREADS", "1")
    out = tmp_path / "v"
    assert main(["verify", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["threads"] == "1"
    assert (out / "verify.csv").exists()


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BOUSSINESQ_CI_THREADS", "zero")
    assert main(["verify", "--out", str(tmp_path / "v")]) == 2


def test_diagnose_flux(tmp_path):
    cfg = _sim_cfg(init={"kind": "random", "amp": 0.05}, t_end=0.02, dt=0.005, Q=[2], p=[2])
    out = tmp_path / "d"
    assert main(["diagnose-flux", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    assert (out / "flux_p2_Q2.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert "p2_Q2" in man["summary"]["flux"]
