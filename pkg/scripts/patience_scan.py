"""How the episode-max-delta patience window affects early stopping.

For each window W this reports how many of 20 small random MDPs are learned
exactly (>= 9 of 10 seeds match value iteration) and the lr=0.4 medians on
the default graph.
"""

import argparse
import os
import statistics
from dataclasses import replace

from malq.env import EnvKind, EnvVariant, make_env
from malq.graph import default_graph, random_deterministic_graph
from malq.qlearning import TrainConfig, extract_policy, train
from malq.sweep import SweepConfig, run_sweep, value_iteration


def small_mdps_learned(patience: int) -> int:
    good = 0
    for k in range(20):
        g = random_deterministic_graph(k)
        _, ideal = value_iteration(g, EnvVariant.default(EnvKind.BASE), 0.9)
        hits = sum(
            extract_policy(train(make_env(g, EnvKind.BASE, seed),
                                 TrainConfig(alpha=0.5, seed=seed,
                                             convergence_patience=patience)).q_table).actions
            == ideal.actions
            for seed in range(10))
        good += hits >= 9
    return good


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", default="1,5,10,25,100")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    print(f"{'W':>4} {'mdps':>6} " + " ".join(f"{e:>16}" for e in ("base", "reward", "time")))
    for w in map(int, args.windows.split(",")):
        base_cfg = replace(SweepConfig().base_train_config, convergence_patience=w)
        res = run_sweep(default_graph(), SweepConfig(learning_rates=(0.4,), seeds=tuple(range(10)),
                                                     base_train_config=base_cfg),
                        workers=args.workers, keep_train_results=False)
        cols = []
        for env in res.env_names():
            cells = [c for k, c in res.final_dict.items() if k[0] == env]
            cols.append(f"{statistics.median(c.episodes_to_convergence for c in cells):>8.1f}"
                        f"/{statistics.median(c.policy_accuracy for c in cells):.3f}")
        print(f"{w:>4} {small_mdps_learned(w):>4}/20 " + " ".join(f"{c:>16}" for c in cols))


if __name__ == "__main__":
    main()
