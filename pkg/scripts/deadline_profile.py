"""How the policy behaves as the deadline approaches.

Solves the shipped model, prints the affine policy coefficients per step,
then simulates paths and reports the mean inventory and mean action at
each step.  The terminal penalty makes the gain on remaining inventory
ramp up toward the deadline: early steps mostly wait for passive fills,
late steps snipe whatever is left.

Usage: python3 scripts/deadline_profile.py [--paths 20000]
"""

import argparse
import sys

import numpy as np

sys.path.insert(0, "src")

from cop_lqr import (
    ExecState,
    ModelParams,
    SimConfig,
    gamma_linear,
    simulate_paths,
    solve_backward,
    value_at,
)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    params = ModelParams.uniform(6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, 0.4)
    solved = solve_backward(params)
    x0 = ExecState(5.0, 5.0)
    print(f"start state: q={x0.q} lots, lam={x0.lam}/min")
    print(f"v0 = {value_at(solved.values[0], x0):.4f} half-spreads\n")

    print("policy coefficients (u = alpha + beta_q*q + beta_lambda*lam):")
    print(f"{'n':>2} {'alpha':>9} {'beta_q':>8} {'beta_lambda':>12}")
    for n, pol in enumerate(solved.policies):
        print(f"{n:2d} {pol.alpha:9.4f} {pol.beta_q:8.4f} {pol.beta_lambda:12.4f}")

    cfg = SimConfig(seed=args.seed, n_paths=args.paths, mode="raw", initial_state=x0)
    records = simulate_paths(solved, params, cfg)
    qs = np.array([[row.q for row in rec.steps] for rec in records])
    us = np.array([[row.u for row in rec.steps] for rec in records])
    ws = np.array([[row.w for row in rec.steps] for rec in records])
    q_final = np.array([rec.final_state.q for rec in records])

    print(f"\nsimulated profile over {args.paths} paths:")
    print(f"{'n':>2} {'mean_q':>8} {'mean_u':>8} {'mean_W':>8}")
    for n in range(params.n_steps):
        print(
            f"{n:2d} {qs[:, n].mean():8.4f} {us[:, n].mean():8.4f} "
            f"{ws[:, n].mean():8.4f}"
        )
    print(f"\nmean final inventory: {q_final.mean():.4f} lots")


if __name__ == "__main__":
    main()
