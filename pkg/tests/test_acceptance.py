"""Acceptance checks, one per criterion, each reporting a PASS/FAIL line.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``. Tolerances are the contract's, not tuned.
"""

from __future__ import annotations

import statistics
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from malq.cli import main as cli_main
from malq.env import EnvKind, EnvVariant, make_env
from malq.graph import (chain_graph, default_graph, dump_graph, load_graph,
                        random_deterministic_graph)
from malq.qlearning import (ConvergenceMode, QTable, TrainConfig, decay_epsilon,
                            extract_policy, select_action, train)
from malq.report import ReportKind, dump_qtable, emit_report, load_qtable
from malq.rng import SplitMix64
from malq.sweep import SweepConfig, get_acc, run_sweep, value_iteration
from malq.trace import SHIPPED_SCENARIOS, build_trajectory, execute_trajectory, shipped_command_map

RESULTS: dict[int, str] = {}

ACC_TARGET = 0.90
N_SEEDS = 10


def record(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] C{n} {title}: {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


_cache: dict = {}


def lr04_sweep():
    """Default graph, three variants, lr 0.4, seeds 0..9, default training config."""
    if "lr04" not in _cache:
        cfg = SweepConfig(learning_rates=(0.4,), seeds=tuple(range(N_SEEDS)))
        _cache["lr04"] = run_sweep(default_graph(), cfg, keep_train_results=False)
    return _cache["lr04"]


def lr04_medians(field_name: str) -> dict[str, float]:
    res = lr04_sweep()
    return {env: statistics.median(getattr(c, field_name) for k, c in res.final_dict.items()
                                   if k[0] == env)
            for env in res.env_names()}


def test_c1_oracle_equivalence_on_small_mdps():
    t0 = time.perf_counter()
    per_mdp = []
    for k in range(20):
        g = random_deterministic_graph(k)
        _, ideal = value_iteration(g, EnvVariant.default(EnvKind.BASE), 0.9)
        hits = 0
        for seed in range(10):
            r = train(make_env(g, EnvKind.BASE, seed), TrainConfig(alpha=0.5, gamma=0.9, seed=seed))
            hits += extract_policy(r.q_table).actions == ideal.actions
        per_mdp.append(hits)
    elapsed = time.perf_counter() - t0
    good = sum(h >= 9 for h in per_mdp)
    record(1, "oracle equivalence", good == 20 and elapsed < 60,
           f"{good}/20 MDPs with >=9/10 seeds matching (per MDP {per_mdp}), {elapsed:.1f}s")


def test_c2_bellman_fixed_point_on_chain():
    r = train(make_env(chain_graph(3), EnvKind.BASE, 0),
              TrainConfig(alpha=0.5, gamma=0.9, seed=0, episodes=2000))
    q0, q1 = r.q_table.values[0, 0], r.q_table.values[1, 0]
    ok = abs(q0 - 1.76) <= 1e-3 and abs(q1 - 2.0) <= 1e-3
    record(2, "chain fixed point", ok,
           f"Q(s0,advance)={q0:.6f} (1.76), Q(s1,advance)={q1:.6f} (2.0), "
           f"converged at episode {r.converged_at}")


def test_c3_get_acc_exactness():
    ideal = list(range(67))
    a = get_acc(ideal, ideal[:63] + [-1] * 4)
    b = get_acc(ideal, ideal)
    c = get_acc(ideal, [x + 100 for x in ideal])
    ok = (f"{a:.5f}", f"{b:.5f}", f"{c:.5f}") == ("0.94030", "1.00000", "0.00000")
    record(3, "get_acc exactness", ok, f"63/67={a:.5f}, identical={b:.5f}, disjoint={c:.5f}")


def test_c4_reward_semantics():
    got = {}
    for kind in EnvKind:
        env = make_env(chain_graph(3), kind)
        got[kind] = (env.step(0).reward, env.step(0).reward)
    ok = (got[EnvKind.BASE][0] == -0.04 and got[EnvKind.REWARD_SHAPED][1] == 4.0
          and got[EnvKind.TIME_PRESSURE] == (-0.1, 4.0))
    record(4, "reward semantics", ok,
           ", ".join(f"{k.value}: step {s}, done {d}" for k, (s, d) in got.items()))


def test_c5_default_sweep_shape_time_and_replay(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MALQ_SEED", raising=False)
    t0 = time.perf_counter()
    rc = cli_main(["sweep", "--seed", "0", "--out", "sweep.csv"])
    elapsed = time.perf_counter() - t0
    outputs = ["sweep.csv", "sweep.csv.manifest.json"]
    first = {p: (tmp_path / p).read_bytes() for p in outputs}
    rows = first["sweep.csv"].decode().splitlines()[1:]
    for p in outputs[:1]:
        (tmp_path / p).unlink()
    rc2 = cli_main(["replay", "sweep.csv.manifest.json"])
    same = all((tmp_path / p).read_bytes() == first[p] for p in outputs)
    ok = rc == rc2 == 0 and len(rows) == 33 and elapsed < 300 and same
    record(5, "sweep shape and replay", ok,
           f"{len(rows)} cells in {elapsed:.1f}s, replay byte-identical={same}")


def test_c6_reward_shaped_converges_fastest():
    med = lr04_medians("episodes_to_convergence")
    base, shaped, timep = med["env_new1"], med["env_new2"], med["env_new3"]
    ok = shaped <= base and shaped <= timep
    record(6, "convergence ordering at lr=0.4", ok,
           f"median episodes base={base}, reward={shaped}, time={timep} over {N_SEEDS} seeds")


def test_c7_reward_shaped_accuracy():
    med = lr04_medians("policy_accuracy")
    ok = med["env_new2"] >= ACC_TARGET
    record(7, "policy accuracy at lr=0.4", ok,
           f"median accuracy reward={med['env_new2']:.5f} (target >= {ACC_TARGET}); "
           f"base={med['env_new1']:.5f}, time={med['env_new3']:.5f}")


def test_c8_epsilon_schedule():
    r = train(make_env(default_graph(), EnvKind.REWARD_SHAPED, 0), TrainConfig(alpha=0.4, seed=0))
    tr = r.epsilon_trace
    monotone = all(b <= a for a, b in zip(tr, tr[1:]))
    long_run = train(make_env(chain_graph(3), EnvKind.BASE, 0),
                     TrainConfig(episodes=300, epsilon_decay_value=0.01,
                                 convergence_mode=ConvergenceMode.PER_UPDATE,
                                 convergence_threshold=1e-300)).epsilon_trace
    floor_ok = min(long_run) == 0.01 and all(b <= a for a, b in zip(long_run, long_run[1:]))
    exact = decay_epsilon(0.9, 0.001, 0.01)
    ok = tr[0] == 0.9 and monotone and min(tr) >= 0.01 and floor_ok and exact == 0.8995
    record(8, "epsilon schedule", ok,
           f"start={tr[0]}, non-increasing={monotone}, floor reached and held={floor_ok}, "
           f"decay_epsilon(0.9, 0.001, 0.01)={exact!r}")


def test_c9_property_suites():
    from malq.qlearning import bellman_update

    rng = SplitMix64(2024)
    worst = 0.0
    for _ in range(10_000):
        q, r, m = (rng.random() * 20 - 10 for _ in range(3))
        alpha, gamma = 1e-6 + rng.random() * (1 - 1e-6), rng.random() * 0.999
        exact = Fraction(q) + Fraction(alpha) * (Fraction(r) + Fraction(gamma) * Fraction(m) - Fraction(q))
        worst = max(worst, abs(bellman_update(q, r, m, alpha, gamma) - float(exact)))
    bell_ok = worst < 1e-12

    rng = SplitMix64.stream(0, 2)
    freq = np.bincount([select_action([0.0] * 10, 1.0, rng, 10) for _ in range(10_000)],
                       minlength=10) / 10_000
    freq_ok = bool(np.all(np.abs(freq - 0.1) <= 0.02))

    g = default_graph()
    graphs = [g, chain_graph(4)] + [random_deterministic_graph(k) for k in range(50)]
    graph_ok = all(load_graph(dump_graph(x)) == x for x in graphs)
    qrng = np.random.default_rng(0)
    tables = [QTable(qrng.normal(size=(67, 10)) * 10 ** float(e)) for e in range(-8, 9)]
    q_ok = all(load_qtable(dump_qtable(t, f)) == t for t in tables for f in ("csv", "json"))

    prng = SplitMix64(99)
    chain_ok = True
    for i in range(100):
        actions = [prng.randbelow(10) for _ in range(67)]
        t = build_trajectory(g, actions, seed=i, step_cap=100)
        chain_ok &= t.steps[0].state == 0 and all(
            a.next_state == b.state for a, b in zip(t.steps, t.steps[1:]))

    ok = bell_ok and freq_ok and graph_ok and q_ok and chain_ok
    record(9, "property suites", ok,
           f"bellman max|d|={worst:.1e}, eps-greedy freq in [{freq.min():.4f},{freq.max():.4f}], "
           f"graph round-trip={graph_ok}, qtable round-trip={q_ok}, chaining(100)={chain_ok}")


def test_c10_timing_pipeline():
    g = default_graph()
    _, ideal = value_iteration(g, EnvVariant.default(EnvKind.REWARD_SHAPED))
    traj = build_trajectory(g, ideal.actions, seed=0, step_cap=67)
    maps = [shipped_command_map(n).check_against(g) for n in SHIPPED_SCENARIOS]

    def report(seed):
        series = [execute_trajectory(traj, m, "simulate", seed=seed) for m in maps]
        return series, emit_report(series, ReportKind.COMMAND_TIMINGS, "csv")

    s0, a = report(0)
    _, b = report(0)
    _, c = report(1)
    groups = list(dict.fromkeys(line.split(",")[0] for line in a.decode().splitlines()[1:]))
    ok = (a == b and a != c and groups == ["WannaCry", "Cerber", "Cridex"]
          and all(p.duration > 0 for s in s0 for p in s.points))
    record(10, "timing pipeline", ok,
           f"trajectory {len(traj.steps)} steps -> {traj.terminal_label}; "
           f"{[len(s.points) for s in s0]} points per scenario; reproducible={a == b}, "
           f"seed-sensitive={a != c}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
