"""Command timings along the optimal trajectory for the three shipped scenarios.

The trajectory follows the value-iteration policy of the reward-shaped
variant. Timings are simulated unless ``--shell`` is given, which spawns the
placeholder commands for real.
"""

import argparse
import statistics
from pathlib import Path

from malq.env import EnvKind, EnvVariant
from malq.graph import default_graph
from malq.report import ReportKind, emit_report, write_atomic
from malq.sweep import value_iteration
from malq.trace import SHIPPED_SCENARIOS, build_trajectory, execute_trajectory, shipped_command_map


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shell", action="store_true", help="run the commands instead of simulating")
    ap.add_argument("--out", type=Path, default=Path("results/timings.csv"))
    args = ap.parse_args()

    g = default_graph()
    _, ideal = value_iteration(g, EnvVariant.default(EnvKind.REWARD_SHAPED))
    traj = build_trajectory(g, ideal.actions, seed=args.seed)
    print(f"trajectory: {traj.visited_states()} -> {traj.terminal_label}")

    backend = "shell" if args.shell else "simulate"
    series = [execute_trajectory(traj, shipped_command_map(n).check_against(g), backend,
                                 seed=args.seed, allow_shell=args.shell)
              for n in SHIPPED_SCENARIOS]
    write_atomic(args.out, emit_report(series, ReportKind.COMMAND_TIMINGS))
    for s in series:
        d = [p.duration for p in s.points]
        print(f"{s.scenario_label:>9}: {len(d)} commands, total {sum(d):.2f}s, "
              f"median {statistics.median(d):.3f}s")


if __name__ == "__main__":
    main()
