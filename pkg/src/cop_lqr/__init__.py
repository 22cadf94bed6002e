"""Child order placement via stochastic LQR: closed-form sniping policies,
brute-force numerical oracles, and a Poisson-fill Monte Carlo harness.

Costs are in half-spreads, time in minutes, quantities in lots.
"""

from .lqr import (
    AffinePolicy,
    ExecState,
    InvalidParams,
    ModelParams,
    QuadraticValue,
    SolvedModel,
    SolverError,
    backstep,
    gamma_constant,
    gamma_linear,
    last_period_policy,
    policy_action,
    solve_backward,
    step_matrices,
    terminal_value,
    value_at,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .oracle import (
    GridSpec,
    GridTables,
    OracleError,
    bellman_rhs_folded,
    bellman_rhs_raw,
    grid_dp,
    minimize_u,
)
from .simulator import (
    CalibrationResult,
    PathRecord,
    SimConfig,
    SimReport,
    SimulationError,
    StepRow,
    calibrate_impact,
    monte_carlo,
    negative_rate_probability,
    run_path,
    simulate_paths,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePolicy",
    "CalibrationResult",
    "ConfigError",
    "ExecState",
    "GridSpec",
    "GridTables",
    "InvalidParams",
    "ModelParams",
    "OracleError",
    "PathRecord",
    "QuadraticValue",
    "RunConfig",
    "SimConfig",
    "SimReport",
    "SimulationError",
    "SolvedModel",
    "SolverError",
    "StepRow",
    "backstep",
    "bellman_rhs_folded",
    "bellman_rhs_raw",
    "calibrate_impact",
    "gamma_constant",
    "gamma_linear",
    "grid_dp",
    "last_period_policy",
    "load_config",
    "minimize_u",
    "monte_carlo",
    "negative_rate_probability",
    "parse_config",
    "policy_action",
    "run_path",
    "simulate_paths",
    "solve_backward",
    "step_matrices",
    "terminal_value",
    "value_at",
    "__version__",
]
