"""How market impact shapes the optimal sniping schedule.

Sweeps the impact slope eta with everything else pinned to the shipped
model and prints, per eta: the start-state value, the first action, the
share of inventory taken by sniping, and the mean leftover inventory.
Stronger impact makes hitting the near touch more expensive in fills
forgone, so the policy leans harder on sniping as eta rises while the
value of the whole program falls.

Usage: python3 scripts/aggressiveness_sweep.py [--paths 20000]
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
    monte_carlo,
    policy_action,
    solve_backward,
    value_at,
)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    x0 = ExecState(5.0, 5.0)
    print(f"start state: q={x0.q} lots, lam={x0.lam}/min, horizon 6 x 0.1 min")
    print(f"{'eta':>6} {'v0':>10} {'u0':>8} {'snipe_share':>12} {'mean_final_q':>13}")
    for eta in np.linspace(0.0, 0.45, 10):
        params = ModelParams.uniform(
            6, 0.1, gamma_linear(6, 0.1, 0.5), 100.0, float(eta)
        )
        solved = solve_backward(params)
        cfg = SimConfig(
            seed=args.seed, n_paths=args.paths, mode="raw", initial_state=x0
        )
        report = monte_carlo(solved, params, cfg)
        print(
            f"{eta:6.3f} {value_at(solved.values[0], x0):10.4f} "
            f"{policy_action(solved.policies[0], x0):8.4f} "
            f"{report.snipe_share:12.4f} {report.mean_completion_shortfall:13.4f}"
        )


if __name__ == "__main__":
    main()
