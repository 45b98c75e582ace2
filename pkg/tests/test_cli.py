import json
import subprocess

import numpy as np
import pytest

from occusim.cli import dispatch


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return str(p)


def _cov_cfg(half_width=20.0, replicas=500, pairs=None, seed=11):
    return {
        "label": "cli-cov",
        "sim": {"alpha": 0.75, "dim": 1, "branch_rate": 1.0,
                "law": {"kind": "binary"},
                "window": {"half_width": half_width}},
        "phis": [{"amplitude": 1.0, "center": [0.0], "sigma": 1.0}],
        "horizons": [1.0],
        "out_grid": [1.0],
        "replicas": replicas,
        "cov_pairs": pairs or [[0.5, 0.5], [0.5, 1.0]],
        "comparisons": ["poisson_cov"],
        "master_seed": seed,
    }


def test_console_script_help():
    out = subprocess.run(["occusim", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0
    assert "check-limit" in out.stdout


def test_gfacts_runs_clean(tmp_path, capsys):
    stem = str(tmp_path / "gf")
    assert dispatch(["gfacts", "--fuzz", "5", "--seed", "1",
                     "--out", stem]) == 0
    capsys.readouterr()
    csv = (tmp_path / "gf.csv").read_text()
    assert csv.splitlines()[0].startswith("name,")
    assert "gfacts[binary].g_at_zero" in csv
    assert (tmp_path / "gf.json").exists()
    assert (tmp_path / "gf.png").exists()


def test_b3_identity_cli(capsys):
    assert dispatch(["b3-identity"]) == 0
    capsys.readouterr()
    assert dispatch(["b3-identity", "--psi", "gauss_bump", "--d", "2",
                     "--alpha", "1.2"]) == 0
    capsys.readouterr()
    assert dispatch(["b3-identity", "--psi", "nonsense"]) == 2
    capsys.readouterr()


def test_sample_limit_cli(tmp_path, capsys):
    stem = str(tmp_path / "paths")
    assert dispatch(["sample-limit", "--kind", "fractional", "--h", "1.5",
                     "--grid", "16", "--paths", "2", "--seed", "3",
                     "--out", stem]) == 0
    capsys.readouterr()
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "t,path0,path1"
    assert len(lines) == 17
    meta = json.loads((tmp_path / "paths.json").read_text())
    assert meta["jitter_used"] == 0.0
    assert dispatch(["sample-limit", "--kind", "brownian", "--h", "1.5"]) == 2
    capsys.readouterr()
    assert dispatch(["sample-limit", "--kind", "fractional", "--h", "2.5"]) \
        == 2
    capsys.readouterr()


def test_check_cov_passes_and_writes(tmp_path, capsys):
    cfg = _write(tmp_path, "cov.json", _cov_cfg())
    stem = str(tmp_path / "cov_out")
    assert dispatch(["check-cov", "--config", cfg, "--out", stem,
                     "--reproducible"]) == 0
    capsys.readouterr()
    csv = (tmp_path / "cov_out.csv").read_text()
    assert csv.count("poisson_cov") == 2
    meta = json.loads((tmp_path / "cov_out.json").read_text())["metadata"]
    assert "truncation_bias" in meta
    assert len(meta["truncation_bias"]) == 2
    assert meta["truncation_bias"][0]["window_bias"] < 0
    assert (tmp_path / "cov_out.png").exists()


def test_check_cov_gate_trips_on_starved_window(tmp_path, capsys):
    # a window much smaller than the ancestor range loses real variance:
    # the untruncated oracle must reject the run
    cfg = _write(tmp_path, "bad.json",
                 _cov_cfg(half_width=4.0, replicas=2500,
                          pairs=[[1.0, 1.0]], seed=5))
    stem = str(tmp_path / "bad_out")
    code = dispatch(["check-cov", "--config", cfg, "--out", stem,
                     "--reproducible"])
    out = capsys.readouterr()
    assert code == 1
    assert "gate failure" in out.err
    rows = (tmp_path / "bad_out.csv").read_text().strip().splitlines()[1:]
    z = float(rows[0].split(",")[-1])
    assert z < -4.0


def test_check_cov_workers_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path, "cov.json", _cov_cfg(replicas=400))
    a, b = str(tmp_path / "w1"), str(tmp_path / "w3")
    assert dispatch(["check-cov", "--config", cfg, "--out", a,
                     "--workers", "1", "--reproducible"]) == 0
    assert dispatch(["check-cov", "--config", cfg, "--out", b,
                     "--workers", "3", "--reproducible"]) == 0
    capsys.readouterr()
    assert (tmp_path / "w1.csv").read_bytes() == \
        (tmp_path / "w3.csv").read_bytes()
    ja = json.loads((tmp_path / "w1.json").read_text())
    jb = json.loads((tmp_path / "w3.json").read_text())
    assert ja["records"] == jb["records"]
    assert ja["config_hash"] == jb["config_hash"]


def test_check_limit_smoke_with_window_note(tmp_path, capsys):
    cfg = _write(tmp_path, "lim.json", {
        "label": "cli-limit",
        "sim": {"alpha": 0.75, "dim": 1, "branch_rate": 1.0,
                "law": {"kind": "binary"},
                "window": {"truncation_epsilon": 0.05}},
        "phis": [{"amplitude": 1.0, "center": [0.0], "sigma": 1.0}],
        "horizons": [2.0],
        "out_grid": [0.5, 1.0],
        "replicas": 400,
        "dense_steps": [0.125],
        "comparisons": ["finite_horizon_variance"],
        "master_seed": 13,
    })
    stem = str(tmp_path / "lim_out")
    assert dispatch(["check-limit", "--config", cfg, "--out", stem,
                     "--reproducible"]) == 0
    capsys.readouterr()
    meta = json.loads((tmp_path / "lim_out.json").read_text())["metadata"]
    assert "window_bias" in meta
    notes = meta["window_bias"]
    assert len(notes) == 2
    for n in notes:
        assert n["window_bias"] < 0
        assert n["windowed_prediction"] < n["exact_variance"]
    assert (tmp_path / "lim_out.png").exists()


def test_check_vn_smoke(tmp_path, capsys):
    cfg = _write(tmp_path, "vn.json", {
        "label": "cli-vn",
        "sim": {"alpha": 0.75, "dim": 1, "branch_rate": 1.0,
                "law": {"kind": "binary"},
                "window": {"half_width": 30.0}},
        "phis": [{"amplitude": 0.5, "center": [0.0], "sigma": 1.0}],
        "weight": {"kind": "constant"},
        "horizons": [2.0],
        "out_grid": [1.0],
        "replicas": 10,
        "comparisons": ["v_vs_n"],
        "vn_points": [{"x": 0.0, "r": 0.0, "t": 1.0, "T": 2.0,
                       "reps": 150}],
        "master_seed": 2,
    })
    assert dispatch(["check-vn", "--config", cfg, "--reproducible"]) == 0
    out = capsys.readouterr().out
    assert "v_vs_n[x=0]" in out
    # a config without vn_points is a usage error
    cfg2 = _write(tmp_path, "vn2.json", _cov_cfg())
    assert dispatch(["check-vn", "--config", cfg2]) == 2
    capsys.readouterr()


def test_simulate_writes_paths(tmp_path, capsys):
    cfg = _write(tmp_path, "sim.json", {
        "label": "cli-sim",
        "sim": {"alpha": 0.75, "dim": 1, "branch_rate": 1.0,
                "law": {"kind": "binary"},
                "window": {"half_width": 10.0}},
        "phis": [{"amplitude": 1.0, "center": [0.0], "sigma": 1.0}],
        "horizons": [1.0],
        "out_grid": [1.0],
        "replicas": 6,
        "dense_steps": [0.25],
        "comparisons": [],
        "master_seed": 4,
    })
    stem = str(tmp_path / "sim_out")
    assert dispatch(["simulate", "--config", cfg, "--out", stem]) == 0
    capsys.readouterr()
    lines = (tmp_path / "sim_out.csv").read_text().splitlines()
    assert lines[0].startswith("t,rep0")
    assert len(lines) == 6   # header + t = 0, .25, .5, .75, 1
    assert (tmp_path / "sim_out.png").exists()


def test_config_error_reporting(tmp_path, capsys):
    cfg = _cov_cfg()
    cfg["sim"]["xalpha"] = 1.0
    path = _write(tmp_path, "bad_key.json", cfg)
    assert dispatch(["check-cov", "--config", path]) == 2
    err = capsys.readouterr().err
    assert "config error" in err
    assert "unknown key 'xalpha'" in err
    assert "config line" in err

    bad_json = tmp_path / "broken.json"
    bad_json.write_text("{ nope\n")
    assert dispatch(["check-cov", "--config", str(bad_json)]) == 2
    err = capsys.readouterr().err
    assert "invalid JSON" in err

    assert dispatch(["check-cov", "--config",
                     str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err
    assert "cannot read config" in err


def test_config_error_in_phi_and_law(tmp_path, capsys):
    cfg = _cov_cfg()
    cfg["phis"][0]["width"] = 2.0
    path = _write(tmp_path, "bad_phi.json", cfg)
    assert dispatch(["check-cov", "--config", path]) == 2
    err = capsys.readouterr().err
    assert "unknown key 'width'" in err and "phis[0]" in err

    cfg = _cov_cfg()
    cfg["sim"]["law"] = {"kind": "septenary"}
    path = _write(tmp_path, "bad_law.json", cfg)
    assert dispatch(["check-cov", "--config", path]) == 2
    capsys.readouterr()


def test_seed_and_replica_overrides(tmp_path, capsys):
    cfg = _write(tmp_path, "cov.json", _cov_cfg(replicas=500))
    stem = str(tmp_path / "ovr")
    assert dispatch(["check-cov", "--config", cfg, "--out", stem,
                     "--replicas", "80", "--seed", "99",
                     "--reproducible"]) == 0
    capsys.readouterr()
    meta = json.loads((tmp_path / "ovr.json").read_text())["metadata"]
    assert meta["replicas"] == [80]
