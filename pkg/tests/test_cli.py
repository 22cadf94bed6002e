"""End-to-end checks of the command line: files, exit codes, round trips."""

import json
import os

import numpy as np
import pytest

import cop_lqr.verify
from cop_lqr import (
    ExecState,
    QuadraticValue,
    SolvedModel,
    load_config,
    policy_action,
    solve_backward,
    value_at,
)
from cop_lqr.cli import main
from cop_lqr.config import ConfigError, parse_config
from cop_lqr.tables import read_path_csv, rebuild_solved


BASE = {
    "version": 1,
    "model": {
        "n_steps": 6,
        "dt": 0.1,
        "gamma": {"kind": "linear", "start": 0.1, "stop": 0.5},
        "gamma_terminal": 100.0,
        "eta": 0.4,
    },
    "simulation": {
        "seed": 42,
        "n_paths": 500,
        "mode": "raw",
        "initial_state": {"q": 5.0, "lam": 5.0},
    },
}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def base_config(**model_overrides):
    doc = json.loads(json.dumps(BASE))
    doc["model"].update(model_overrides)
    return doc


def test_config_defaults_and_unknown_keys(tmp_path):
    doc = {"version": 1, "model": BASE["model"]}
    cfg = parse_config(json.dumps(doc))
    assert cfg.simulation.n_paths == 1000
    assert cfg.simulation.initial_state == ExecState(5.0, 5.0)
    assert cfg.output.directory == "out"
    assert cfg.oracle.enable_grid is False

    doc["model"] = dict(BASE["model"], bogus=1)
    with pytest.raises(ConfigError, match="unknown key.*bogus"):
        parse_config(json.dumps(doc))


def test_config_gamma_and_dt_forms(tmp_path):
    doc = base_config(gamma=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], dt=[0.1] * 6)
    cfg = parse_config(json.dumps(doc))
    assert cfg.model.gamma == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    doc = base_config(gamma={"kind": "constant", "value": 0.2})
    assert parse_config(json.dumps(doc)).model.gamma == (0.2,) * 6
    doc = base_config(gamma={"kind": "cubic"})
    with pytest.raises(ConfigError, match="constant.*linear|linear.*constant"):
        parse_config(json.dumps(doc))
    doc = base_config(dt=[0.1, 0.1])
    with pytest.raises(ConfigError, match="n_steps=6"):
        parse_config(json.dumps(doc))


def test_config_version_and_syntax_errors():
    with pytest.raises(ConfigError, match="version"):
        parse_config(json.dumps({"version": 9, "model": BASE["model"]}))
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config("{not json")
    with pytest.raises(ConfigError, match="missing required block: model"):
        parse_config(json.dumps({"version": 1}))


def test_solve_roundtrip(tmp_path):
    cfg_path = write_config(tmp_path, BASE)
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg_path, "--out", out]) == 0
    params = load_config(cfg_path).model
    reloaded = rebuild_solved(os.path.join(out, "policy.csv"), params)
    solved = solve_backward(params)
    rng = np.random.default_rng(7)
    for _ in range(60):
        x = ExecState(float(rng.uniform(-10, 10)), float(rng.uniform(0, 10)))
        n = int(rng.integers(0, params.n_steps))
        assert abs(
            value_at(reloaded.values[n], x) - value_at(solved.values[n], x)
        ) <= 1e-12
        assert abs(
            policy_action(reloaded.policies[n], x)
            - policy_action(solved.policies[n], x)
        ) <= 1e-12

    summary = json.load(open(os.path.join(out, "solve_summary.json")))
    assert summary["all_pd"] is True
    assert len(summary["pd_flags"]) == params.n_steps
    assert summary["v0"] == pytest.approx(
        value_at(solved.values[0], ExecState(5.0, 5.0)), rel=1e-15
    )


def test_solve_rejects_validity_violation(tmp_path, capsys):
    cfg_path = write_config(tmp_path, base_config(eta=12.0))
    code = main(["solve", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "validity constraint eta*dt < 1" in err
    assert "config.json:" in err


def test_solve_single_step_matches_closed_form(tmp_path):
    from cop_lqr import last_period_policy

    doc = base_config(n_steps=1, dt=0.1, gamma=0.1)
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg_path, "--out", out]) == 0
    params = load_config(cfg_path).model
    reloaded = rebuild_solved(os.path.join(out, "policy.csv"), params)
    assert len(reloaded.policies) == 1
    direct = last_period_policy(params)
    assert reloaded.policies[0].alpha == pytest.approx(direct.alpha, abs=1e-16)
    assert reloaded.policies[0].beta_q == pytest.approx(direct.beta_q, abs=1e-16)


def test_missing_config_file(tmp_path, capsys):
    code = main(["solve", "--config", str(tmp_path / "nope.json"), "--out", "x"])
    assert code == 2
    assert "cannot read config" in capsys.readouterr().err


def test_verify_passes_on_shipped_model(tmp_path):
    cfg_path = write_config(tmp_path, BASE)
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg_path, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "verify_report.json")))
    assert report["all_passed"] is True
    names = {c["name"] for c in report["checks"]}
    assert {
        "last_period_closed_form",
        "pd_propagation",
        "argmin_agreement",
        "bellman_fixed_point",
        "raw_vs_folded_expectation",
    } <= names
    bell = next(c for c in report["checks"] if c["name"] == "bellman_fixed_point")
    assert bell["max_residual"] <= 1e-6


def test_verify_detects_corrupted_curvature(tmp_path, monkeypatch):
    # negative control: wreck the step-0 curvature and policy behind the
    # solver's back; the minimizer cross-check must catch it and exit 4
    def corrupted(params):
        solved = solve_backward(params)
        vals = list(solved.values)
        v0 = vals[0]
        vals[0] = QuadraticValue(v0.p11 + 0.3, v0.p12, v0.p22, v0.b1, v0.b2, v0.c)
        pols = list(solved.policies)
        pols[0] = type(pols[0])(
            alpha=pols[0].alpha + 0.05,
            beta_q=pols[0].beta_q,
            beta_lambda=pols[0].beta_lambda,
        )
        return SolvedModel(values=tuple(vals), policies=tuple(pols))

    monkeypatch.setattr(cop_lqr.verify, "solve_backward", corrupted)
    cfg_path = write_config(tmp_path, BASE)
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg_path, "--out", out]) == 4
    report = json.load(open(os.path.join(out, "verify_report.json")))
    assert report["all_passed"] is False
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "argmin_agreement" in failed


def test_verify_grid_small_model(tmp_path):
    doc = base_config(n_steps=1, dt=0.2, gamma=0.1, gamma_terminal=50.0, eta=0.2)
    doc["oracle"] = {
        "enable_grid": True,
        "grid": {
            "q_min": -20.0, "q_max": 12.0, "lam_min": 0.0, "lam_max": 9.0,
            "n_q": 129, "n_lam": 37, "u_min": -18.0, "u_max": 8.0, "n_u": 53,
        },
    }
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    assert main(["verify", "--config", cfg_path, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "verify_report.json")))
    grid = next(c for c in report["checks"] if c["name"] == "grid_dp_gap")
    assert grid["passed"] is True
    assert grid["max_residual"] <= 1e-3


def test_simulate_report_and_paths(tmp_path):
    cfg_path = write_config(tmp_path, BASE)
    out = str(tmp_path / "out")
    paths_csv = str(tmp_path / "paths.csv")
    code = main(
        ["simulate", "--config", cfg_path, "--out", out, "--paths-out", paths_csv]
    )
    assert code == 0
    report = json.load(open(os.path.join(out, "sim_report.json")))
    assert report["mode"] == "raw"
    assert report["n_paths"] == 500
    assert report["abort_count"] == 0
    with open(paths_csv) as fh:
        header = fh.readline().strip()
    assert header == "path,n,q,lambda,u,W,stage_cost"
    logs = read_path_csv(paths_csv)
    assert len(logs) == 500
    assert all(len(steps) == 6 for steps in logs.values())


def test_simulate_deterministic_degenerate_case(tmp_path):
    doc = base_config(eta=0.0, gamma=0.1)
    doc["simulation"] = {
        "seed": 1,
        "n_paths": 1,
        "mode": "raw",
        "initial_state": {"q": 5.0, "lam": 0.0},
    }
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg_path, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "sim_report.json")))
    params = load_config(cfg_path).model
    solved = solve_backward(params)
    v0 = value_at(solved.values[0], ExecState(5.0, 0.0))
    assert report["stderr"] is None
    assert abs(report["mean_cost"] - v0) <= 1e-12 * max(1.0, abs(v0))


def test_simulate_overlay_label(tmp_path):
    doc = json.loads(json.dumps(BASE))
    doc["simulation"]["mode"] = "overlay"
    doc["simulation"]["n_paths"] = 50
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg_path, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "sim_report.json")))
    assert report["label"] == "model-inconsistent overlay"


def test_simulate_preflight_refusal_exit_code(tmp_path, capsys):
    cfg_path = write_config(tmp_path, base_config(eta=0.5))
    code = main(["simulate", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 5
    assert "pre-flight refusal" in capsys.readouterr().err


def test_seed_override_changes_draws(tmp_path):
    doc = json.loads(json.dumps(BASE))
    doc["simulation"]["n_paths"] = 200
    cfg_path = write_config(tmp_path, doc)
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    out_c = str(tmp_path / "c")
    assert main(["simulate", "--config", cfg_path, "--out", out_a]) == 0
    assert main(["simulate", "--config", cfg_path, "--out", out_b, "--seed", "43"]) == 0
    assert main(["simulate", "--config", cfg_path, "--out", out_c, "--seed", "42"]) == 0
    mean = lambda d: json.load(open(os.path.join(d, "sim_report.json")))["mean_cost"]
    assert mean(out_a) != mean(out_b)
    assert mean(out_a) == mean(out_c)


def test_thread_env_cap_validation(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("COP_LQR_THREADS", "banana")
    cfg_path = write_config(tmp_path, BASE)
    code = main(["simulate", "--config", cfg_path, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "COP_LQR_THREADS" in capsys.readouterr().err


def test_sweep_single_point_matches_solve_and_simulate(tmp_path):
    doc = json.loads(json.dumps(BASE))
    doc["simulation"]["n_paths"] = 300
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    code = main(
        ["sweep", "--config", cfg_path, "--out", out,
         "--axis", "gamma_terminal", "--start", "100.0", "--stop", "100.0",
         "--points", "1"]
    )
    assert code == 0
    with open(os.path.join(out, "sweep_gamma_terminal.csv")) as fh:
        header = fh.readline().strip().split(",")
        row = dict(zip(header, fh.readline().strip().split(",")))
    assert row["status"] == "ok"

    assert main(["simulate", "--config", cfg_path, "--out", out]) == 0
    report = json.load(open(os.path.join(out, "sim_report.json")))
    params = load_config(cfg_path).model
    solved = solve_backward(params)
    assert float(row["v0"]) == value_at(solved.values[0], ExecState(5.0, 5.0))
    assert float(row["snipe_share"]) == report["snipe_share"]
    assert float(row["mean_final_q"]) == report["mean_completion_shortfall"]


def test_sweep_marks_failed_points_and_continues(tmp_path):
    doc = json.loads(json.dumps(BASE))
    doc["simulation"]["n_paths"] = 50
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    # eta = 10 violates eta*dt < 1 and must fail without killing the sweep
    code = main(
        ["sweep", "--config", cfg_path, "--out", out,
         "--axis", "eta", "--start", "0.0", "--stop", "10.0", "--points", "3"]
    )
    assert code == 0
    with open(os.path.join(out, "sweep_eta.csv")) as fh:
        lines = fh.read().strip().splitlines()
    assert len(lines) == 4
    statuses = [line.split(",")[-1] for line in lines[1:]]
    assert statuses[0] == "ok"
    assert "failed" in statuses


def test_sweep_lambda0_axis(tmp_path):
    doc = json.loads(json.dumps(BASE))
    doc["simulation"]["n_paths"] = 50
    cfg_path = write_config(tmp_path, doc)
    out = str(tmp_path / "out")
    code = main(
        ["sweep", "--config", cfg_path, "--out", out,
         "--axis", "lambda0", "--start", "5.0", "--stop", "9.0", "--points", "3"]
    )
    assert code == 0
    with open(os.path.join(out, "sweep_lambda0.csv")) as fh:
        lines = fh.read().strip().splitlines()
    rows = [line.split(",") for line in lines[1:]]
    assert all(r[-1] == "ok" for r in rows)
    # value of the run should differ across starting hit rates
    v0s = [float(r[2]) for r in rows]
    assert len(set(v0s)) == 3
