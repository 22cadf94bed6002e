"""Monte Carlo execution of a solved sniping policy through Poisson fills.

Each path plays the affine policy forward from the initial state, sampling
the number of passive fills per step and accumulating realized cost.  In
raw mode the model is followed exactly (signed controls, unclamped
inventory) so the sample mean is an unbiased estimate of the step-0 value;
overlay mode applies the practical clamps a desk would insist on (snipe
size in [0, q], hit rate floored at 0) at the price of model fidelity, and
its report says so.

Randomness comes from the counter-based Philox generator with one
substream per path, keyed by (seed, path index).  Path results therefore
never depend on scheduling, and reports aggregate per-path rows in path
order, so any worker count produces bit-identical output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .lqr import (
    ExecState,
    InvalidParams,
    ModelParams,
    SolvedModel,
    policy_action,
    value_at,
)

__all__ = [
    "SimulationError",
    "SimConfig",
    "StepRow",
    "PathRecord",
    "SimReport",
    "CalibrationResult",
    "path_rng",
    "sample_poisson",
    "step_state",
    "run_path",
    "simulate_paths",
    "monte_carlo",
    "negative_rate_probability",
    "calibrate_impact",
]

# Runs tolerate at most this fraction of aborted paths (raw mode) and the
# pre-flight refuses configurations whose estimated chance of a negative
# hit rate exceeds it.
ABORT_TOL = 1e-6

OVERLAY_LABEL = "model-inconsistent overlay"


class SimulationError(RuntimeError):
    """A simulation run could not produce a trustworthy report."""


@dataclass(frozen=True)
class SimConfig:
    """What to simulate: RNG seed, path count, clamping mode, start state."""

    seed: int
    n_paths: int
    mode: str
    initial_state: ExecState

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParams(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.n_paths < 1:
            raise InvalidParams(f"n_paths must be >= 1, got {self.n_paths}")
        if self.mode not in ("raw", "overlay"):
            raise InvalidParams(f"mode must be 'raw' or 'overlay', got {self.mode!r}")
        if self.initial_state.lam < 0.0:
            raise InvalidParams("initial hit rate must be nonnegative")


class StepRow(NamedTuple):
    """One step of one path, in the exact order the CSV export uses."""

    n: int
    q: float
    lam: float
    u: float
    w: int
    stage_cost: float


@dataclass(frozen=True)
class PathRecord:
    """Full history of one path plus its terminal accounting."""

    path: int
    steps: tuple[StepRow, ...]
    final_state: ExecState
    terminal_cost: float
    total_cost: float
    clamp_count: int
    aborted: bool


@dataclass(frozen=True)
class SimReport:
    """Aggregate statistics over the completed paths of one run.

    stderr is None for a single path.  In overlay mode ``label`` carries
    the warning that the numbers no longer estimate the model value.
    """

    mode: str
    label: str
    n_paths: int
    abort_count: int
    clamp_count: int
    mean_cost: float
    stderr: float | None
    cost_quantiles: dict[int, float]
    mean_completion_shortfall: float
    snipe_share: float


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Philox substream for one path: counter-based, keyed by (seed, path)."""
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_poisson(rng: np.random.Generator, mean: float) -> int:
    """One Poisson draw from the given stream; refuses negative means."""
    if mean < 0.0:
        raise SimulationError(f"negative Poisson rate: mean {mean}")
    return int(rng.poisson(mean))


def step_state(x: ExecState, u: float, w: int, eta: float) -> ExecState:
    """Advance inventory and hit rate: (q - u - w, lam - eta*u)."""
    return ExecState(x.q - u - w, x.lam - eta * u)


def _play(
    solved: SolvedModel,
    params: ModelParams,
    config: SimConfig,
    path_index: int,
    collect: bool,
):
    """Run one path; returns (summary array, step rows or None).

    The summary holds [total_cost, q_N, lam_N, sum_u, sum_w, clamps,
    aborted] with NaN cost on abort.  The draw sequence is identical
    whether or not rows are collected.
    """
    rng = path_rng(config.seed, path_index)
    overlay = config.mode == "overlay"
    x = config.initial_state
    rows = [] if collect else None
    total = 0.0
    sum_u = 0.0
    sum_w = 0.0
    clamps = 0

    for n in range(params.n_steps):
        u = policy_action(solved.policies[n], x)
        if overlay:
            hi = max(x.q, 0.0)
            clamped = min(max(u, 0.0), hi)
            if clamped != u:
                clamps += 1
                u = clamped
        rate = x.lam - params.eta * u
        if rate < 0.0:
            if overlay:
                clamps += 1
                rate = 0.0
            else:
                summary = np.array(
                    [math.nan, x.q, x.lam, sum_u, sum_w, clamps, 1.0]
                )
                return summary, (tuple(rows) if collect else None)
        w = sample_poisson(rng, rate * params.dt[n])
        cost = params.gamma[n] * x.q * x.q + u * u - w
        if collect:
            rows.append(StepRow(n, x.q, x.lam, u, w, cost))
        total += cost
        sum_u += u
        sum_w += w
        x = ExecState(x.q - u - w, rate if overlay else x.lam - params.eta * u)

    total += params.gamma_terminal * x.q * x.q
    summary = np.array([total, x.q, x.lam, sum_u, sum_w, clamps, 0.0])
    return summary, (tuple(rows) if collect else None)


def run_path(
    solved: SolvedModel, params: ModelParams, config: SimConfig, path_index: int
) -> PathRecord:
    """Simulate one path with full step history."""
    if len(solved.policies) != params.n_steps:
        raise InvalidParams("solved model does not cover the horizon")
    summary, rows = _play(solved, params, config, path_index, collect=True)
    total, q_n, lam_n, _, _, clamps, aborted = summary
    return PathRecord(
        path=path_index,
        steps=rows,
        final_state=ExecState(float(q_n), float(lam_n)),
        terminal_cost=params.gamma_terminal * float(q_n) ** 2
        if not aborted
        else math.nan,
        total_cost=float(total),
        clamp_count=int(clamps),
        aborted=bool(aborted),
    )


def simulate_paths(
    solved: SolvedModel,
    params: ModelParams,
    config: SimConfig,
    indices=None,
) -> list[PathRecord]:
    """Replay selected paths (default all) with full histories.

    Substreams make this reproducible: the same (seed, index) always gives
    the same path, so exporting logs after a summary run is exact.
    """
    if indices is None:
        indices = range(config.n_paths)
    return [run_path(solved, params, config, i) for i in indices]


def _chunk_worker(args):
    solved, params, config, start, stop = args
    out = np.empty((stop - start, 7))
    for i in range(start, stop):
        out[i - start], _ = _play(solved, params, config, i, collect=False)
    return start, out


def negative_rate_probability(
    solved: SolvedModel, params: ModelParams, x0: ExecState
) -> float:
    """Estimated probability that any step sees a negative hit rate.

    The closed-loop state is affine in the fills, so its mean and
    covariance propagate exactly; each step's rate is then treated as
    normal and the per-step tail probabilities are summed (a union bound
    on top of a normal approximation, documented as an estimate).
    """
    m = np.array([x0.q, x0.lam])
    cov = np.zeros((2, 2))
    e1 = np.array([1.0, 0.0])
    total = 0.0
    for n in range(params.n_steps):
        pol = solved.policies[n]
        beta = np.array([pol.beta_q, pol.beta_lambda])
        dt = params.dt[n]
        s = np.array([0.0, 1.0]) - params.eta * beta
        t = -params.eta * pol.alpha
        rate_mean = float(s @ m) + t
        rate_var = float(s @ cov @ s)
        if rate_var <= 0.0:
            total += 1.0 if rate_mean < 0.0 else 0.0
        else:
            z = rate_mean / math.sqrt(rate_var)
            total += 0.5 * math.erfc(z / math.sqrt(2.0))
        # closed-loop update: x' = T x + d - e1 * W, W ~ Poisson(rate*dt)
        T = np.array(
            [
                [1.0 - pol.beta_q, -pol.beta_lambda],
                [-params.eta * pol.beta_q, 1.0 - params.eta * pol.beta_lambda],
            ]
        )
        d = np.array([-pol.alpha, -params.eta * pol.alpha])
        w_mean = max(rate_mean, 0.0) * dt
        cross = cov @ s * dt
        w_var = w_mean + dt * dt * rate_var
        m = T @ m + d - e1 * w_mean
        cov = (
            T @ cov @ T.T
            - np.outer(T @ cross, e1)
            - np.outer(e1, T @ cross)
            + w_var * np.outer(e1, e1)
        )
        cov = 0.5 * (cov + cov.T)
    return total


def monte_carlo(
    solved: SolvedModel,
    params: ModelParams,
    config: SimConfig,
    n_workers: int = 1,
) -> SimReport:
    """Run the configured number of paths and aggregate a report.

    Raw mode first estimates the chance of hitting a negative rate and
    refuses to run when it exceeds ABORT_TOL; paths that hit one anyway
    are aborted, and the run fails if their fraction exceeds ABORT_TOL.
    Aggregation reads per-path rows in path order, so the report is
    bit-identical for any worker count.
    """
    if len(solved.policies) != params.n_steps:
        raise InvalidParams("solved model does not cover the horizon")
    if config.mode == "raw":
        p_neg = negative_rate_probability(solved, params, config.initial_state)
        if p_neg > ABORT_TOL:
            raise SimulationError(
                f"pre-flight refusal: estimated P(negative hit rate) = "
                f"{p_neg:.3e} exceeds {ABORT_TOL}; use overlay mode or a "
                f"tamer configuration"
            )

    n = config.n_paths
    rows = np.empty((n, 7))
    if n_workers <= 1 or n < 256:
        for i in range(n):
            rows[i], _ = _play(solved, params, config, i, collect=False)
    else:
        bounds = np.linspace(0, n, 4 * n_workers + 1, dtype=int)
        jobs = [
            (solved, params, config, int(a), int(b))
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for start, chunk in pool.map(_chunk_worker, jobs):
                rows[start : start + len(chunk)] = chunk

    aborted = rows[:, 6] > 0.0
    abort_count = int(aborted.sum())
    if abort_count > ABORT_TOL * n:
        raise SimulationError(
            f"abort fraction {abort_count}/{n} exceeds {ABORT_TOL}: "
            f"negative hit rates under the raw dynamics"
        )
    ok = ~aborted
    costs = rows[ok, 0]
    qn = np.array([5.0, 25.0, 50.0, 75.0, 95.0])
    quantiles = {
        int(p): float(v) for p, v in zip(qn, np.percentile(costs, qn))
    }
    sum_u = float(rows[ok, 3].sum())
    sum_w = float(rows[ok, 4].sum())
    filled = sum_u + sum_w
    return SimReport(
        mode=config.mode,
        label=OVERLAY_LABEL if config.mode == "overlay" else "raw",
        n_paths=n,
        abort_count=abort_count,
        clamp_count=int(rows[:, 5].sum()),
        mean_cost=float(costs.mean()),
        stderr=float(costs.std(ddof=1) / math.sqrt(costs.size))
        if costs.size > 1
        else None,
        cost_quantiles=quantiles,
        mean_completion_shortfall=float(rows[ok, 1].mean()),
        snipe_share=(sum_u / filled) if filled != 0.0 else 0.0,
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Least-squares recovery of the base hit rate and the impact slope."""

    lambda0: float
    lambda0_se: float
    eta: float
    eta_se: float
    n_obs: int


def calibrate_impact(
    logs: list[PathRecord], params: ModelParams
) -> CalibrationResult:
    """Estimate (lambda_0, eta) from simulated logs by ordinary least
    squares of per-step fill rates on the running snipe total.

    Within a path the hit rate during step n is exactly
    lambda_0 - eta * (u_0 + ... + u_n), so W_n/dt_n regressed on that
    cumulative control identifies both parameters; the errors have zero
    mean given the regressor, making the pooled fit consistent.  Standard
    errors are the homoskedastic OLS ones.  Raw-mode logs are assumed:
    overlay clamping breaks the exact rate bookkeeping.
    """
    ys = []
    cs = []
    all_u = []
    for rec in logs:
        cum = 0.0
        for row in rec.steps:
            cum += row.u
            cs.append(cum)
            ys.append(row.w / params.dt[row.n])
            all_u.append(row.u)
    if not all_u:
        raise SimulationError("insufficient excitation: no logged steps")
    u_arr = np.array(all_u)
    if u_arr.max() - u_arr.min() == 0.0:
        raise SimulationError(
            "insufficient excitation: control is constant across all logs, "
            "impact slope unidentifiable"
        )
    X = np.column_stack([np.ones(len(cs)), np.array(cs)])
    y = np.array(ys)
    xtx = X.T @ X
    if np.linalg.cond(xtx) > 1e12:
        raise SimulationError(
            "insufficient excitation: regressor matrix is numerically singular"
        )
    coef = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ coef
    dof = max(len(y) - 2, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(xtx)
    return CalibrationResult(
        lambda0=float(coef[0]),
        lambda0_se=float(math.sqrt(cov[0, 0])),
        eta=-float(coef[1]),
        eta_se=float(math.sqrt(cov[1, 1])),
        n_obs=len(y),
    )
