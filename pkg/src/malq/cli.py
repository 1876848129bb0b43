"""``malq`` command line.

Exit codes: 0 success, 1 usage error, 2 validation or runtime error.
Randomized subcommands take ``--seed`` and fall back to ``$MALQ_SEED``
(then 0). Each command given ``--out`` also writes ``<out>.manifest.json``;
``malq replay <manifest>`` re-runs it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .env import ENV_NAMES, EnvVariant, make_env, parse_kind
from .graph import (GraphError, default_graph, dump_graph, generate_default_graph,
                    graph_stats, load_graph_file)
from .qlearning import ConvergenceMode, TrainConfig, extract_policy, train
from .report import (Format, ReportKind, RunManifest, dump_qtable, emit_report,
                     load_sweep_table, load_timings, read_qtable, sweep_table,
                     write_atomic, write_manifest)
from .sweep import (DEFAULT_LEARNING_RATES, SweepConfig, get_acc, load_ideal_policy,
                    parse_seeds, run_sweep, value_iteration)
from .trace import (SHIPPED_SCENARIOS, Backend, build_trajectory, execute_trajectory,
                    load_command_map, shipped_command_map)

EXIT_OK, EXIT_USAGE, EXIT_ERROR = 0, 1, 2
SHIPPED_GRAPH = "<shipped>"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_seed() -> int:
    raw = os.environ.get("MALQ_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MALQ_SEED must be an integer, got {raw!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="malq", description="Q-learning over a malware-analysis workflow MDP.")
    p.add_argument("--version", action="version", version=f"malq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def graph_opt(sp):
        sp.add_argument("--graph", help="graph JSON file (default: shipped graph)")

    def seed_opt(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $MALQ_SEED or 0)")

    def out_opts(sp):
        sp.add_argument("--out", help="output file (default: stdout, no manifest)")
        sp.add_argument("--format", choices=[f.value for f in Format], default=None)

    g = sub.add_parser("graph", help="generate, validate or describe a graph")
    gsub = g.add_subparsers(dest="graph_command", required=True, parser_class=_Parser)
    gen = gsub.add_parser("gen", help="write the default layered workflow graph")
    seed_opt(gen)
    gen.add_argument("--out")
    val = gsub.add_parser("validate", help="check a graph file")
    val.add_argument("file", nargs="?")
    graph_opt(val)
    st = gsub.add_parser("stats", help="pair and terminal counts")
    st.add_argument("file", nargs="?")
    graph_opt(st)

    t = sub.add_parser("train", help="train one agent and save its Q-table")
    graph_opt(t)
    seed_opt(t)
    out_opts(t)
    t.add_argument("--env", default="reward")
    t.add_argument("--lr", type=float, default=0.4)
    t.add_argument("--gamma", type=float, default=0.9)
    t.add_argument("--episodes", type=int, default=10_000)
    t.add_argument("--threshold", type=float, default=1e-4)
    t.add_argument("--convergence", choices=[m.value for m in ConvergenceMode],
                   default=ConvergenceMode.EPISODE_MAX_DELTA.value)
    t.add_argument("--patience", type=int, default=100,
                   help="consecutive quiet episodes needed to stop (episode-max-delta)")

    s = sub.add_parser("sweep", help="environments x learning rates x seeds")
    graph_opt(s)
    out_opts(s)
    s.add_argument("--env", type=lambda x: tuple(x.split(",")), default=tuple(ENV_NAMES),
                   help="comma-separated environments")
    s.add_argument("--lr", type=_floats, default=DEFAULT_LEARNING_RATES,
                   help="comma-separated learning rates")
    s.add_argument("--seeds", type=_seeds, default=None, help='e.g. "0..9" or "1,4"')
    s.add_argument("--seed", type=int, default=None, help="single seed (alias)")
    s.add_argument("--gamma", type=float, default=0.9)
    s.add_argument("--episodes", type=int, default=10_000)
    s.add_argument("--threshold", type=float, default=1e-4)
    s.add_argument("--convergence", choices=[m.value for m in ConvergenceMode],
                   default=ConvergenceMode.EPISODE_MAX_DELTA.value)
    s.add_argument("--patience", type=int, default=100,
                   help="consecutive quiet episodes needed to stop (episode-max-delta)")
    s.add_argument("--exclude-terminals", action="store_true",
                   help="leave terminal states out of accuracy")
    s.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("eval", help="score a saved Q-table against the optimal policy")
    graph_opt(e)
    e.add_argument("--qtable", required=True)
    e.add_argument("--env", default="reward")
    e.add_argument("--gamma", type=float, default=0.9)
    e.add_argument("--ideal", help='ideal policy JSON {"actions": [...]} instead of the oracle')
    e.add_argument("--exclude-terminals", action="store_true")

    tr = sub.add_parser("trace", help="follow a policy and time the mapped commands")
    graph_opt(tr)
    seed_opt(tr)
    out_opts(tr)
    tr.add_argument("--qtable", help="greedy policy source (default: optimal policy)")
    tr.add_argument("--env", default="reward")
    tr.add_argument("--gamma", type=float, default=0.9)
    tr.add_argument("--map", action="append", dest="maps",
                    help=f"command map file or one of {', '.join(SHIPPED_SCENARIOS)}; repeatable")
    tr.add_argument("--backend", choices=[b.value for b in Backend], default="simulate")
    tr.add_argument("--allow-shell", action="store_true",
                    help="required with --backend shell")
    tr.add_argument("--step-cap", type=int, default=500)

    r = sub.add_parser("report", help="plot-ready table from a saved sweep or timings file")
    r.add_argument("--in", dest="source", required=True)
    r.add_argument("--kind", choices=[k.value for k in ReportKind], required=True)
    out_opts(r)

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    return p


# -- helpers -----------------------------------------------------------------

def _load_graph(path):
    return default_graph() if path is None else load_graph_file(path)


def _fmt(args, default: Format = Format.CSV) -> Format:
    if args.format:
        return Format(args.format)
    out = getattr(args, "out", None)
    if out and str(out).endswith(".json"):
        return Format.JSON
    return default


def _pin_seed(argv, args, seeds) -> list[str]:
    """argv with the resolved seed spelled out, so replay ignores $MALQ_SEED."""
    argv = list(argv)
    has_seed = any(a in ("--seed", "--seeds") or a.startswith(("--seed=", "--seeds="))
                   for a in argv)
    if hasattr(args, "seed") and not has_seed and len(seeds) == 1:
        argv += ["--seed", str(seeds[0])]
    return argv


def _emit(args, data: bytes, argv, config: dict, seeds: list[int], extra_outputs=()) -> None:
    if not args.out:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    write_atomic(args.out, data)
    manifest = RunManifest(
        command=args.command, argv=_pin_seed(argv, args, seeds),
        graph_file=getattr(args, "graph", None) or SHIPPED_GRAPH,
        config_values=config, seeds=seeds,
        output_paths=[str(args.out), *map(str, extra_outputs)])
    write_manifest(manifest, args.out)


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _train_config(args, seed: int, record: bool) -> TrainConfig:
    return TrainConfig(alpha=args.lr,
                       gamma=args.gamma, episodes=args.episodes,
                       convergence_threshold=args.threshold,
                       convergence_mode=ConvergenceMode(args.convergence),
                       convergence_patience=args.patience,
                       seed=seed, record_updates=record)


# -- subcommands -------------------------------------------------------------

def _cmd_graph(args, argv) -> int:
    if args.graph_command == "gen":
        seed = _seed(args)
        data = dump_graph(generate_default_graph(seed))
        if args.out:
            write_atomic(args.out, data)
            write_manifest(RunManifest("graph gen", _pin_seed(argv, args, [seed]), None, {"seed": seed},
                                       [seed], [args.out]), args.out)
        else:
            sys.stdout.buffer.write(data)
        return EXIT_OK
    path = args.file or args.graph
    if path is None:
        raise UsageError(f"graph {args.graph_command}: need a graph file")
    g = load_graph_file(path)
    if args.graph_command == "validate":
        print(f"ok: {g.state_count} states, {len(g.transitions)} defined pairs")
        return EXIT_OK
    stats = graph_stats(g)
    print(json.dumps({
        "state_count": g.state_count,
        "action_space_size": g.action_space_size,
        "defined_pair_count": stats.defined_pair_count,
        "terminal_count": stats.terminal_count,
        "reachable_count": len(g.reachable()),
        "per_state_action_counts": {str(k): v for k, v in stats.per_state_action_counts.items()},
    }, indent=1))
    return EXIT_OK


def _cmd_train(args, argv) -> int:
    graph = _load_graph(args.graph)
    seed = _seed(args)
    kind = parse_kind(args.env)
    config = _train_config(args, seed, record=False)
    result = train(make_env(graph, kind, seed=seed), config)
    _, ideal = value_iteration(graph, EnvVariant.default(kind), args.gamma)
    acc = get_acc(ideal, extract_policy(result.q_table))
    conv = "never" if result.converged_at is None else str(result.converged_at)
    print(f"episodes_run={result.episodes_run} converged_at={conv} accuracy={acc:.5f}",
          file=sys.stderr)
    _emit(args, dump_qtable(result.q_table, _fmt(args)), argv,
          {"env": kind.value, **config.to_dict()}, [seed])
    return EXIT_OK


def _cmd_sweep(args, argv) -> int:
    graph = _load_graph(args.graph)
    if args.seeds is not None and args.seed is not None:
        raise UsageError("sweep: give --seeds or --seed, not both")
    seeds = args.seeds or (_seed(args),)
    base = TrainConfig(gamma=args.gamma, episodes=args.episodes,
                       convergence_threshold=args.threshold,
                       convergence_mode=ConvergenceMode(args.convergence),
                       convergence_patience=args.patience,
                       record_updates=False)
    config = SweepConfig(env_names=args.env, learning_rates=args.lr,
                         base_train_config=base, seeds=seeds,
                         exclude_terminals=args.exclude_terminals)
    result = run_sweep(graph, config, workers=args.workers, keep_train_results=False)
    terminals = "excluded" if args.exclude_terminals else "included"
    _emit(args, sweep_table(result, _fmt(args), terminals), argv,
          config.to_dict(), list(seeds))
    return EXIT_OK


def _cmd_eval(args, argv) -> int:
    graph = _load_graph(args.graph)
    q = read_qtable(args.qtable, graph)
    if args.ideal:
        ideal = load_ideal_policy(Path(args.ideal).read_bytes())
    else:
        _, ideal = value_iteration(graph, EnvVariant.default(parse_kind(args.env)), args.gamma)
    if args.exclude_terminals:
        ideal = ideal.without_terminals(graph)
    print(f"{get_acc(ideal, extract_policy(q)):.5f}")
    return EXIT_OK


def _cmd_trace(args, argv) -> int:
    graph = _load_graph(args.graph)
    seed = _seed(args)
    backend = Backend(args.backend)
    if backend is Backend.SHELL and not args.allow_shell:
        raise UsageError("trace: --backend shell needs --allow-shell")
    if args.qtable:
        policy = extract_policy(read_qtable(args.qtable, graph))
    else:
        _, ideal = value_iteration(graph, EnvVariant.default(parse_kind(args.env)), args.gamma)
        policy = ideal.actions
    maps = []
    for m in args.maps or SHIPPED_SCENARIOS:
        if m in SHIPPED_SCENARIOS and not Path(m).exists():
            maps.append(shipped_command_map(m).check_against(graph))
        else:
            maps.append(load_command_map(Path(m).read_bytes(), graph))
    traj = build_trajectory(graph, policy, seed=seed, step_cap=args.step_cap, kind=args.env)
    series = [execute_trajectory(traj, cm, backend, seed=seed, allow_shell=args.allow_shell)
              for cm in maps]
    print(f"trajectory: {len(traj.steps)} steps, ended {traj.terminal_label}", file=sys.stderr)
    data = emit_report(series, ReportKind.COMMAND_TIMINGS, _fmt(args))
    _emit(args, data, argv, {"env": parse_kind(args.env).value, "gamma": args.gamma,
                             "backend": backend.value, "step_cap": args.step_cap,
                             "maps": list(args.maps or SHIPPED_SCENARIOS),
                             "qtable": args.qtable}, [seed])
    return EXIT_OK


def _cmd_report(args, argv) -> int:
    kind = ReportKind(args.kind)
    raw = Path(args.source).read_bytes()
    result = load_timings(raw) if kind is ReportKind.COMMAND_TIMINGS else load_sweep_table(raw)
    _emit(args, emit_report(result, kind, _fmt(args)), argv,
          {"kind": kind.value, "source": args.source}, [])
    return EXIT_OK


def _cmd_replay(args, argv) -> int:
    manifest = RunManifest.from_bytes(Path(args.manifest).read_bytes())
    if manifest.argv and manifest.argv[0] == "replay":
        raise UsageError("replay: manifest records another replay")
    return main(manifest.argv)


_COMMANDS = {"graph": _cmd_graph, "train": _cmd_train, "sweep": _cmd_sweep,
             "eval": _cmd_eval, "trace": _cmd_trace, "report": _cmd_report,
             "replay": _cmd_replay}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (GraphError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"malq: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
