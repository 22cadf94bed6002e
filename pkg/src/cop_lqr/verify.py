"""Independent numerical cross-checks of a solved model.

Four suites run against the closed form produced by solve_backward, none
of which reuse its algebra: the one-step closed form at the final action
time, positive definiteness of every curvature matrix, scalar-minimizer
agreement with the affine policy, and the dynamic-programming fixed
point under the expectation written two independent ways.  A grid
dynamic program over the whole horizon can be enabled as a fifth suite.
The result is a JSON-ready report with one entry per check: pass/fail,
the worst residual found, and the tolerance it was held to.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .lqr import (
    ExecState,
    backstep,
    last_period_policy,
    policy_action,
    solve_backward,
    terminal_value,
    value_at,
)
from .oracle import bellman_rhs_folded, bellman_rhs_raw, grid_dp, minimize_u

__all__ = ["run_checks"]

LAST_PERIOD_TOL = 1e-12


def _sample_states(config: RunConfig, rng: np.random.Generator, count: int):
    """Random (state, step) pairs spread around the configured start state."""
    x0 = config.simulation.initial_state
    q_span = abs(x0.q) + 5.0
    lam_hi = x0.lam + 5.0
    out = []
    for _ in range(count):
        q = float(rng.uniform(-q_span, q_span))
        lam = float(rng.uniform(0.2, lam_hi))
        n = int(rng.integers(0, config.model.n_steps))
        out.append((ExecState(q, lam), n))
    return out


def _check_last_period(config: RunConfig) -> dict:
    params = config.model
    direct = last_period_policy(params)
    stepped, _ = backstep(params, params.n_steps - 1, terminal_value(params))
    resid = max(
        abs(direct.alpha - stepped.alpha),
        abs(direct.beta_q - stepped.beta_q),
        abs(direct.beta_lambda - stepped.beta_lambda),
    )
    return {
        "name": "last_period_closed_form",
        "passed": bool(resid <= LAST_PERIOD_TOL),
        "max_residual": float(resid),
        "tolerance": LAST_PERIOD_TOL,
    }


def _check_pd(solved) -> dict:
    margins = []
    for val in solved.values[:-1]:
        det = val.p11 * val.p22 - val.p12 * val.p12
        margins.append(min(val.p11, det))
    worst = min(margins)
    return {
        "name": "pd_propagation",
        "passed": bool(worst > 0.0),
        "max_residual": float(max(0.0, -worst)),
        "tolerance": 0.0,
    }


def _check_argmin_and_bellman(config: RunConfig, solved) -> tuple[dict, dict]:
    settings = config.oracle
    rng = np.random.default_rng(settings.seed)
    worst_arg = 0.0
    worst_bell = 0.0
    for x, n in _sample_states(config, rng, settings.check_points):
        # search centered on the candidate action; a wrong candidate puts
        # the true vertex outside and trips the minimizer's edge fault, so
        # the centering cannot hide a disagreement
        u_policy = policy_action(solved.policies[n], x)
        half = abs(x.q) + x.lam * config.model.dt[n] + 10.0
        u_star, f_star = minimize_u(
            x,
            solved.values[n + 1],
            config.model,
            n,
            bracket=(u_policy - half, u_policy + half),
        )
        worst_arg = max(worst_arg, abs(u_star - u_policy))
        v = value_at(solved.values[n], x)
        worst_bell = max(worst_bell, abs(f_star - v) / (1.0 + abs(v)))
    argmin = {
        "name": "argmin_agreement",
        "passed": bool(worst_arg <= settings.argmin_tol),
        "max_residual": float(worst_arg),
        "tolerance": settings.argmin_tol,
    }
    bellman = {
        "name": "bellman_fixed_point",
        "passed": bool(worst_bell <= settings.bellman_tol),
        "max_residual": float(worst_bell),
        "tolerance": settings.bellman_tol,
    }
    return argmin, bellman


def _check_raw_vs_folded(config: RunConfig, solved) -> dict:
    settings = config.oracle
    params = config.model
    rng = np.random.default_rng(settings.seed + 1)
    worst = 0.0
    for x, n in _sample_states(config, rng, settings.check_points):
        # keep the post-control hit rate nonnegative so the raw sum is legal
        hi = x.q + 2.0
        if params.eta > 0.0:
            hi = min(hi, 0.95 * x.lam / params.eta)
        u = float(rng.uniform(-2.0, max(hi, -1.9)))
        raw = bellman_rhs_raw(x, u, solved.values[n + 1], params, n)
        folded = bellman_rhs_folded(x, u, solved.values[n + 1], params, n)
        worst = max(worst, abs(raw - folded) / (1.0 + abs(folded)))
    return {
        "name": "raw_vs_folded_expectation",
        "passed": bool(worst <= settings.raw_folded_tol),
        "max_residual": float(worst),
        "tolerance": settings.raw_folded_tol,
    }


def _check_grid(config: RunConfig, solved) -> dict:
    settings = config.oracle
    tables = grid_dp(config.model, settings.grid)
    worst = 0.0
    for n in range(config.model.n_steps):
        tab = tables.values[n]
        mask = tables.valid[n]
        exact = np.empty_like(tab)
        for i, q in enumerate(tables.q_nodes):
            for j, lam in enumerate(tables.lam_nodes):
                exact[i, j] = value_at(solved.values[n], ExecState(q, lam))
        gaps = np.abs(tab[mask] - exact[mask]) / (1.0 + np.abs(exact[mask]))
        if gaps.size:
            worst = max(worst, float(gaps.max()))
    return {
        "name": "grid_dp_gap",
        "passed": bool(worst <= settings.grid_gap_tol),
        "max_residual": float(worst),
        "tolerance": settings.grid_gap_tol,
    }


def run_checks(config: RunConfig) -> dict:
    """Run every enabled suite and assemble the JSON-ready report."""
    solved = solve_backward(config.model)
    checks = [_check_last_period(config), _check_pd(solved)]
    argmin, bellman = _check_argmin_and_bellman(config, solved)
    checks += [argmin, bellman, _check_raw_vs_folded(config, solved)]
    if config.oracle.enable_grid:
        checks.append(_check_grid(config, solved))
    return {
        "version": 1,
        "all_passed": all(c["passed"] for c in checks),
        "checks": checks,
    }
