"""Command-line entry point: solve, verify, simulate, and sweep workflows.

Every subcommand reads one JSON run config (see config.py for the schema)
and writes machine-readable outputs into the chosen directory.  Exit
codes are the contract:

    0  success
    2  invalid config or arguments (message is line-anchored when possible)
    3  solver or oracle fault
    4  verification check failed (the report is still written)
    5  simulation refused or aborted beyond tolerance

Human-oriented notes go to the console; downstream tooling should parse
the JSON and CSV files only.  ``COP_LQR_THREADS`` caps simulator workers.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .lqr import (
    ExecState,
    InvalidParams,
    SolverError,
    policy_action,
    solve_backward,
    value_at,
)
from .oracle import OracleError
from .simulator import SimulationError, monte_carlo, simulate_paths
from .tables import (
    report_document,
    solve_summary,
    write_json,
    write_path_csv,
    write_policy_csv,
)
from .verify import run_checks

__all__ = ["main", "entry"]

SWEEP_AXES = ("eta", "gamma_terminal", "lambda0")


def _worker_count() -> int:
    workers = os.cpu_count() or 1
    cap = os.environ.get("COP_LQR_THREADS")
    if cap is not None:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            raise ConfigError(
                f"COP_LQR_THREADS must be an integer, got {cap!r}"
            ) from None
    return workers


def _load(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(
            config,
            simulation=replace(config.simulation, seed=args.seed),
        )
    if getattr(args, "out", None) is not None:
        config = replace(
            config, output=replace(config.output, directory=args.out)
        )
    if getattr(args, "format", None) is not None:
        config = replace(
            config, output=replace(config.output, formats=(args.format,))
        )
    return config


def _outdir(config: RunConfig) -> str:
    os.makedirs(config.output.directory, exist_ok=True)
    return config.output.directory


def cmd_solve(config: RunConfig) -> int:
    solved = solve_backward(config.model)
    out = _outdir(config)
    x0 = config.simulation.initial_state
    if "csv" in config.output.formats:
        path = os.path.join(out, "policy.csv")
        write_policy_csv(path, solved)
        print(f"wrote {path}")
    if "json" in config.output.formats:
        path = os.path.join(out, "solve_summary.json")
        write_json(path, solve_summary(solved, config.model, x0))
        print(f"wrote {path}")
    print(
        f"v0 at (q={x0.q}, lam={x0.lam}): "
        f"{value_at(solved.values[0], x0):.6f}, "
        f"u0: {policy_action(solved.policies[0], x0):.6f}"
    )
    return 0


def cmd_verify(config: RunConfig) -> int:
    report = run_checks(config)
    out = _outdir(config)
    path = os.path.join(out, "verify_report.json")
    write_json(path, report)
    for check in report["checks"]:
        state = "pass" if check["passed"] else "FAIL"
        print(
            f"{state}  {check['name']}: max residual "
            f"{check['max_residual']:.3e} (tolerance {check['tolerance']:.0e})"
        )
    print(f"wrote {path}")
    return 0 if report["all_passed"] else 4


def cmd_simulate(config: RunConfig, paths_out: str | None) -> int:
    solved = solve_backward(config.model)
    report = monte_carlo(
        solved, config.model, config.simulation, n_workers=_worker_count()
    )
    out = _outdir(config)
    path = os.path.join(out, "sim_report.json")
    write_json(path, report_document(report))
    print(f"wrote {path}")
    if paths_out is not None:
        records = simulate_paths(solved, config.model, config.simulation)
        write_path_csv(paths_out, records)
        print(f"wrote {paths_out}")
    x0 = config.simulation.initial_state
    v0 = value_at(solved.values[0], x0)
    dev = abs(report.mean_cost - v0)
    print(f"mean cost {report.mean_cost:.6f} vs v0 {v0:.6f}")
    if report.stderr:
        print(f"|mean - v0| / stderr = {dev / report.stderr:.3f}")
    else:
        print(f"|mean - v0| = {dev:.3e} (no stderr: single path or zero spread)")
    if report.mode == "overlay":
        print(f"note: {report.label}")
    return 0


def _sweep_point(config: RunConfig, axis: str, v: float, workers: int) -> dict:
    model = config.model
    sim = config.simulation
    if axis == "eta":
        model = replace(model, eta=v)
    elif axis == "gamma_terminal":
        model = replace(model, gamma_terminal=v)
    else:
        sim = replace(sim, initial_state=ExecState(sim.initial_state.q, v))
    solved = solve_backward(model)
    x0 = sim.initial_state
    report = monte_carlo(solved, model, sim, n_workers=workers)
    return {
        "v0": value_at(solved.values[0], x0),
        "u0_at_x0": policy_action(solved.policies[0], x0),
        "snipe_share": report.snipe_share,
        "mean_final_q": report.mean_completion_shortfall,
    }


def cmd_sweep(config: RunConfig, axis: str, start: float, stop: float, points: int) -> int:
    if points < 1:
        raise ConfigError(f"--points must be >= 1, got {points}")
    workers = _worker_count()
    out = _outdir(config)
    path = os.path.join(out, f"sweep_{axis}.csv")
    rows = []
    for v in np.linspace(start, stop, points):
        try:
            row = _sweep_point(config, axis, float(v), workers)
            rows.append((float(v), row, "ok"))
        except (InvalidParams, SolverError, OracleError, SimulationError) as exc:
            print(f"point {axis}={v:g} failed: {exc}", file=sys.stderr)
            rows.append((float(v), None, "failed"))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("axis,value,v0,u0_at_x0,snipe_share,mean_final_q,status\n")
        for v, row, status in rows:
            if row is None:
                fh.write(f"{axis},{v:.17g},,,,,{status}\n")
            else:
                fh.write(
                    f"{axis},{v:.17g},{row['v0']:.17g},{row['u0_at_x0']:.17g},"
                    f"{row['snipe_share']:.17g},{row['mean_final_q']:.17g},{status}\n"
                )
    print(f"wrote {path} ({sum(1 for _, _, s in rows if s == 'ok')}/{len(rows)} ok)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cop-lqr",
        description="Child order placement: closed-form solver, numerical "
        "verification, and Monte Carlo simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, fmt=True):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        if seed:
            p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        if fmt:
            p.add_argument(
                "--format", choices=("csv", "json"), help="restrict output format"
            )

    p = sub.add_parser("solve", help="write policy and value tables")
    common(p, seed=False)
    p = sub.add_parser("verify", help="run numerical cross-checks")
    common(p, fmt=False)
    p = sub.add_parser("simulate", help="Monte Carlo policy evaluation")
    common(p)
    p.add_argument("--paths-out", help="also write per-step path logs (CSV)")
    p = sub.add_parser("sweep", help="solve+simulate along one parameter axis")
    common(p, fmt=False)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--start", required=True, type=float)
    p.add_argument("--stop", required=True, type=float)
    p.add_argument("--points", required=True, type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _load(args)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "verify":
            return cmd_verify(config)
        if args.command == "simulate":
            return cmd_simulate(config, args.paths_out)
        return cmd_sweep(config, args.axis, args.start, args.stop, args.points)
    except (ConfigError, InvalidParams) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
