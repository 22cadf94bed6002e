"""Disk formats: policy/value tables as CSV, summaries and reports as JSON.

CSV numbers are written with 17 significant digits so a 64-bit float
survives the round trip bit for bit; JSON floats use Python's shortest
exact representation, which is equally lossless.  All files are UTF-8
with LF line endings and CSV files carry a header row.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from typing import Iterable

from .lqr import (
    AffinePolicy,
    ExecState,
    ModelParams,
    QuadraticValue,
    SolvedModel,
    policy_action,
    terminal_value,
    value_at,
)
from .simulator import PathRecord, SimReport, StepRow

__all__ = [
    "POLICY_COLUMNS",
    "PATH_COLUMNS",
    "write_policy_csv",
    "read_policy_csv",
    "rebuild_solved",
    "solve_summary",
    "write_json",
    "write_path_csv",
    "read_path_csv",
    "report_document",
]

POLICY_COLUMNS = (
    "n",
    "alpha",
    "beta_q",
    "beta_lambda",
    "p11",
    "p12",
    "p22",
    "b1",
    "b2",
    "c",
)

PATH_COLUMNS = ("path", "n", "q", "lambda", "u", "W", "stage_cost")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_policy_csv(path: str, solved: SolvedModel) -> None:
    """One row per decision step n: the policy and the step-n value
    coefficients.  The terminal value lives in the JSON summary."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POLICY_COLUMNS)
        for n, pol in enumerate(solved.policies):
            val = solved.values[n]
            w.writerow(
                [n]
                + [
                    _fmt(v)
                    for v in (
                        pol.alpha,
                        pol.beta_q,
                        pol.beta_lambda,
                        val.p11,
                        val.p12,
                        val.p22,
                        val.b1,
                        val.b2,
                        val.c,
                    )
                ]
            )


def read_policy_csv(
    path: str,
) -> tuple[tuple[AffinePolicy, ...], tuple[QuadraticValue, ...]]:
    """Inverse of write_policy_csv, minus the terminal value."""
    policies = []
    values = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != POLICY_COLUMNS:
            raise ValueError(
                f"{path}: expected columns {','.join(POLICY_COLUMNS)}, "
                f"got {','.join(reader.fieldnames or ())}"
            )
        for row in reader:
            policies.append(
                AffinePolicy(
                    alpha=float(row["alpha"]),
                    beta_q=float(row["beta_q"]),
                    beta_lambda=float(row["beta_lambda"]),
                )
            )
            values.append(
                QuadraticValue(
                    p11=float(row["p11"]),
                    p12=float(row["p12"]),
                    p22=float(row["p22"]),
                    b1=float(row["b1"]),
                    b2=float(row["b2"]),
                    c=float(row["c"]),
                )
            )
    return tuple(policies), tuple(values)


def rebuild_solved(path: str, params: ModelParams) -> SolvedModel:
    """Reload a solve CSV into a SolvedModel, appending the terminal value."""
    policies, values = read_policy_csv(path)
    if len(policies) != params.n_steps:
        raise ValueError(
            f"{path}: {len(policies)} rows but the model has "
            f"{params.n_steps} steps"
        )
    return SolvedModel(
        values=values + (terminal_value(params),), policies=policies
    )


def _pd_flags(solved: SolvedModel) -> list[bool]:
    flags = []
    for val in solved.values[:-1]:
        det = val.p11 * val.p22 - val.p12 * val.p12
        flags.append(bool(val.p11 > 0.0 and det > 0.0))
    return flags


def solve_summary(
    solved: SolvedModel, params: ModelParams, x0: ExecState
) -> dict:
    """JSON-ready summary of a solve: model echo, PD flags, start-state
    value and action."""
    flags = _pd_flags(solved)
    terminal = solved.values[-1]
    return {
        "version": 1,
        "model": {
            "n_steps": params.n_steps,
            "dt": list(params.dt),
            "gamma": list(params.gamma),
            "gamma_terminal": params.gamma_terminal,
            "eta": params.eta,
        },
        "pd_flags": flags,
        "all_pd": all(flags),
        "terminal": asdict(terminal),
        "initial_state": {"q": x0.q, "lam": x0.lam},
        "v0": value_at(solved.values[0], x0),
        "u0": policy_action(solved.policies[0], x0),
    }


def write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, allow_nan=True)
        fh.write("\n")


def write_path_csv(path: str, records: Iterable[PathRecord]) -> None:
    """Step logs for every path, one row per (path, step)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for rec in records:
            for row in rec.steps:
                w.writerow(
                    [
                        rec.path,
                        row.n,
                        _fmt(row.q),
                        _fmt(row.lam),
                        _fmt(row.u),
                        row.w,
                        _fmt(row.stage_cost),
                    ]
                )


def read_path_csv(path: str) -> dict[int, list[StepRow]]:
    """Step logs grouped by path index, in file order."""
    out: dict[int, list[StepRow]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PATH_COLUMNS:
            raise ValueError(
                f"{path}: expected columns {','.join(PATH_COLUMNS)}, "
                f"got {','.join(reader.fieldnames or ())}"
            )
        for row in reader:
            out.setdefault(int(row["path"]), []).append(
                StepRow(
                    n=int(row["n"]),
                    q=float(row["q"]),
                    lam=float(row["lambda"]),
                    u=float(row["u"]),
                    w=int(row["W"]),
                    stage_cost=float(row["stage_cost"]),
                )
            )
    return out


def report_document(report: SimReport) -> dict:
    """JSON-ready form of a SimReport (quantile keys become strings)."""
    doc = asdict(report)
    doc["cost_quantiles"] = {str(k): v for k, v in report.cost_quantiles.items()}
    return doc
