"""Unit tests for the Monte Carlo harness."""

import math

import numpy as np
import pytest

from cop_lqr import (
    AffinePolicy,
    ExecState,
    InvalidParams,
    ModelParams,
    SolvedModel,
    gamma_linear,
    solve_backward,
    value_at,
)
from cop_lqr.simulator import (
    SimConfig,
    SimulationError,
    calibrate_impact,
    monte_carlo,
    negative_rate_probability,
    path_rng,
    run_path,
    sample_poisson,
    simulate_paths,
    step_state,
)

BENIGN = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.4)
X0 = ExecState(5.0, 5.0)


# ------------------------------------------------------------------ sampling


def test_substreams_reproducible_and_distinct():
    a = [sample_poisson(path_rng(42, 7), 3.0) for _ in range(20)]
    b = [sample_poisson(path_rng(42, 7), 3.0) for _ in range(20)]
    assert a == b
    r1, r2 = path_rng(42, 7), path_rng(42, 8)
    s1 = [sample_poisson(r1, 3.0) for _ in range(20)]
    s2 = [sample_poisson(r2, 3.0) for _ in range(20)]
    assert s1 != s2


def test_sample_zero_mean_is_zero():
    rng = path_rng(1, 0)
    assert all(sample_poisson(rng, 0.0) == 0 for _ in range(100))


def test_sample_negative_mean_faults():
    with pytest.raises(SimulationError, match="negative Poisson rate"):
        sample_poisson(path_rng(1, 0), -0.5)


def test_sample_mean_statistics():
    # mean of n draws concentrates at the Poisson mean with sd sqrt(m/n)
    rng = path_rng(2024, 0)
    n = 10**6
    total = sum(sample_poisson(rng, 4.0) for _ in range(n))
    assert abs(total / n - 4.0) <= 3.0 * (2.0 / 1000.0)


def test_rate_knockdown_arithmetic_exact():
    # lam=5.0, eta=0.5, u=2 takes the sampling rate to exactly 4.0
    assert 5.0 - 0.5 * 2.0 == 4.0
    x = step_state(ExecState(5.0, 5.0), 2.0, 0, 0.5)
    assert x.lam == 4.0


def test_step_state_examples():
    assert step_state(ExecState(5, 3), 1, 2, 0.0) == ExecState(2, 3)
    assert step_state(ExecState(5, 5), 2, 0, 0.5) == ExecState(3, 4)
    assert step_state(ExecState(5, 3), 0, 0, 0.7) == ExecState(5, 3)


# ---------------------------------------------------------------- run_path


def test_config_validation():
    with pytest.raises(InvalidParams):
        SimConfig(seed=-1, n_paths=10, mode="raw", initial_state=X0)
    with pytest.raises(InvalidParams):
        SimConfig(seed=1, n_paths=0, mode="raw", initial_state=X0)
    with pytest.raises(InvalidParams):
        SimConfig(seed=1, n_paths=10, mode="exact", initial_state=X0)
    with pytest.raises(InvalidParams):
        SimConfig(seed=1, n_paths=10, mode="raw", initial_state=ExecState(5.0, -1.0))


def test_deterministic_path_no_randomness():
    # lam0 = 0 with eta = 0 keeps the rate at zero: no fills, and the
    # realized cost must equal the value function exactly as there is no
    # variance anywhere
    p = ModelParams.uniform(4, 0.1, 0.3, 50.0, 0.0)
    s = solve_backward(p)
    cfg = SimConfig(seed=9, n_paths=1, mode="raw", initial_state=ExecState(3.0, 0.0))
    rec = run_path(s, p, cfg, 0)
    assert all(row.w == 0 for row in rec.steps)
    v0 = value_at(s.values[0], cfg.initial_state)
    assert rec.total_cost == pytest.approx(v0, rel=1e-12)


def test_path_record_consistency():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=42, n_paths=1, mode="raw", initial_state=X0)
    rec = run_path(s, BENIGN, cfg, 0)
    assert len(rec.steps) == BENIGN.n_steps
    assert [row.n for row in rec.steps] == list(range(BENIGN.n_steps))
    total = sum(row.stage_cost for row in rec.steps) + rec.terminal_cost
    assert rec.total_cost == pytest.approx(total, abs=1e-9)


def test_conservation_replayed_exactly():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=5, n_paths=50, mode="raw", initial_state=X0)
    for rec in simulate_paths(s, BENIGN, cfg):
        q, lam = X0.q, X0.lam
        for row in rec.steps:
            assert row.q == q and row.lam == lam
            q = q - row.u - row.w
            lam = lam - BENIGN.eta * row.u
        assert q == rec.final_state.q
        assert lam == rec.final_state.lam


def test_identical_seeds_identical_records():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=77, n_paths=3, mode="raw", initial_state=X0)
    assert simulate_paths(s, BENIGN, cfg) == simulate_paths(s, BENIGN, cfg)


def test_large_terminal_penalty_completes():
    # one step, near-infinite completion pressure, no impact: the policy
    # trades expected remaining lots and the terminal inventory centers on 0
    p = ModelParams.uniform(1, 0.1, 0.0, 1e6, 1e-9)
    s = solve_backward(p)
    cfg = SimConfig(seed=3, n_paths=4000, mode="raw", initial_state=ExecState(5.0, 5.0))
    rep = monte_carlo(s, p, cfg)
    u0 = s.policies[0].alpha + s.policies[0].beta_q * 5.0 + s.policies[0].beta_lambda * 5.0
    assert u0 == pytest.approx(5.0 - 5.0 * 0.1, abs=1e-3)
    se = math.sqrt(0.5 / 4000)  # Var(q_N) = E[W] = lam*dt = 0.5
    assert abs(rep.mean_completion_shortfall) <= 4.0 * se


# -------------------------------------------------------------- monte_carlo


def test_single_path_report():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=21, n_paths=1, mode="raw", initial_state=X0)
    rep = monte_carlo(s, BENIGN, cfg)
    assert rep.stderr is None
    rec = run_path(s, BENIGN, cfg, 0)
    assert rep.mean_cost == rec.total_cost


def test_report_quantiles_monotone():
    s = solve_backward(BENIGN)
    rep = monte_carlo(s, BENIGN, SimConfig(seed=8, n_paths=500, mode="raw", initial_state=X0))
    qs = [rep.cost_quantiles[k] for k in (5, 25, 50, 75, 95)]
    assert qs == sorted(qs)
    assert rep.abort_count == 0


def test_mean_cost_tracks_value():
    s = solve_backward(BENIGN)
    rep = monte_carlo(s, BENIGN, SimConfig(seed=12, n_paths=8000, mode="raw", initial_state=X0))
    v0 = value_at(s.values[0], X0)
    assert abs(rep.mean_cost - v0) <= 4.0 * rep.stderr


def test_worker_count_bit_identical():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=7, n_paths=1200, mode="raw", initial_state=X0)
    assert monte_carlo(s, BENIGN, cfg, n_workers=1) == monte_carlo(
        s, BENIGN, cfg, n_workers=3
    )


def test_overlay_equals_raw_when_clamps_idle():
    # near-zero impact keeps the rate positive and the big starting queue
    # keeps the policy strictly inside [0, q], so no clamp can fire
    p = ModelParams.uniform(6, 0.1, 0.01, 2.0, 0.002)
    s = solve_backward(p)
    x0 = ExecState(50.0, 0.2)
    raw = monte_carlo(s, p, SimConfig(seed=42, n_paths=800, mode="raw", initial_state=x0))
    ovl = monte_carlo(
        s, p, SimConfig(seed=42, n_paths=800, mode="overlay", initial_state=x0)
    )
    assert ovl.clamp_count == 0
    assert ovl.label == "model-inconsistent overlay"
    assert raw.label == "raw"
    assert ovl.mean_cost == raw.mean_cost
    assert ovl.stderr == raw.stderr
    assert ovl.cost_quantiles == raw.cost_quantiles
    assert ovl.snipe_share == raw.snipe_share


def test_overlay_clamps_hostile_start():
    # starving the hit rate forces the policy into clamp territory
    p = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.5)
    s = solve_backward(p)
    cfg = SimConfig(seed=13, n_paths=200, mode="overlay", initial_state=ExecState(8.0, 0.3))
    rep = monte_carlo(s, p, cfg)
    assert rep.clamp_count > 0
    assert rep.abort_count == 0
    for rec in simulate_paths(s, p, cfg, indices=range(20)):
        for row in rec.steps:
            assert row.u >= 0.0
            assert row.lam >= 0.0


def test_preflight_refuses_risky_raw_config():
    p = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.5)
    s = solve_backward(p)
    assert negative_rate_probability(s, p, X0) > 1e-6
    with pytest.raises(SimulationError, match="pre-flight"):
        monte_carlo(s, p, SimConfig(seed=1, n_paths=100, mode="raw", initial_state=X0))


def test_abort_fraction_fails_run(monkeypatch):
    # force the pre-flight to pass for a configuration that aborts often
    p = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.5)
    s = solve_backward(p)
    monkeypatch.setattr(
        "cop_lqr.simulator.negative_rate_probability", lambda *a, **k: 0.0
    )
    cfg = SimConfig(seed=1, n_paths=300, mode="raw", initial_state=ExecState(9.0, 0.5))
    with pytest.raises(SimulationError, match="abort fraction"):
        monte_carlo(s, p, cfg)


def test_aborted_path_record_marked():
    p = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.5)
    s = solve_backward(p)
    cfg = SimConfig(seed=1, n_paths=1, mode="raw", initial_state=ExecState(9.0, 0.2))
    rec = run_path(s, p, cfg, 0)
    assert rec.aborted
    assert math.isnan(rec.total_cost)
    assert len(rec.steps) < p.n_steps


# -------------------------------------------------------------- calibration


def test_calibration_recovers_impact():
    s = solve_backward(BENIGN)
    cfg = SimConfig(seed=11, n_paths=400, mode="raw", initial_state=X0)
    cal = calibrate_impact(simulate_paths(s, BENIGN, cfg), BENIGN)
    assert cal.n_obs == 400 * BENIGN.n_steps
    assert abs(cal.eta - BENIGN.eta) <= 3.5 * cal.eta_se
    assert abs(cal.lambda0 - X0.lam) <= 3.5 * cal.lambda0_se
    assert cal.eta_se < 0.2


def test_calibration_null_impact():
    p = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.0)
    s = solve_backward(p)
    cfg = SimConfig(seed=19, n_paths=400, mode="raw", initial_state=X0)
    cal = calibrate_impact(simulate_paths(s, p, cfg), p)
    assert abs(cal.eta) <= 3.5 * cal.eta_se


def test_calibration_faults_without_excitation():
    idle = SolvedModel(
        values=solve_backward(BENIGN).values,
        policies=tuple(AffinePolicy(0.0, 0.0, 0.0) for _ in range(BENIGN.n_steps)),
    )
    cfg = SimConfig(seed=2, n_paths=20, mode="raw", initial_state=X0)
    logs = simulate_paths(idle, BENIGN, cfg)
    assert all(row.u == 0.0 for rec in logs for row in rec.steps)
    with pytest.raises(SimulationError, match="insufficient excitation"):
        calibrate_impact(logs, BENIGN)


def test_calibration_faults_on_empty_logs():
    with pytest.raises(SimulationError, match="insufficient excitation"):
        calibrate_impact([], BENIGN)
