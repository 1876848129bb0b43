"""Learning-rate sweep over the three variants, written as plot-ready tables.

Produces ``sweep.csv`` (every cell), ``convergence.csv`` (median episodes per
lr) and ``accuracy.csv`` (median accuracy per lr) under ``--out-dir`` and
prints both medians side by side.

    python scripts/lr_sweep.py --seeds 0..9 --workers 4
"""

import argparse
import os
import time
from pathlib import Path

from malq.graph import default_graph
from malq.report import ReportKind, emit_report, sweep_table, write_atomic
from malq.sweep import SweepConfig, accuracy_curve, convergence_curve, parse_seeds, run_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0..9")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    args = ap.parse_args()

    cfg = SweepConfig(seeds=parse_seeds(args.seeds))
    t0 = time.perf_counter()
    res = run_sweep(default_graph(), cfg, workers=args.workers, keep_train_results=False)
    elapsed = time.perf_counter() - t0

    write_atomic(args.out_dir / "sweep.csv", sweep_table(res))
    write_atomic(args.out_dir / "convergence.csv", emit_report(res, ReportKind.CONVERGENCE_SPEED))
    write_atomic(args.out_dir / "accuracy.csv", emit_report(res, ReportKind.ACCURACY_VS_LR))

    envs = res.env_names()
    conv = {e: dict(convergence_curve(res, e)) for e in envs}
    acc = {e: dict(accuracy_curve(res, e)) for e in envs}
    print(f"{len(res.final_dict)} cells, {len(cfg.seeds)} seeds, {elapsed:.1f}s")
    print("lr     " + "".join(f"{e:>20}" for e in envs))
    for lr in cfg.learning_rates:
        print(f"{lr:<7}" + "".join(f"{conv[e][lr]:>10.1f} / {acc[e][lr]:.3f}" for e in envs))
    print("(median episodes to convergence / median policy accuracy)")


if __name__ == "__main__":
    main()
