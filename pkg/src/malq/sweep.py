"""Learning-rate sweep over the reward variants, accuracy scoring, and the
value-iteration oracle that supplies the ideal policy."""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, NamedTuple, Sequence

from .env import ENV_NAMES, EnvVariant, make_env, parse_kind
from .graph import WorkflowGraph
from .qlearning import Policy, TrainConfig, TrainResult, extract_policy, train

DEFAULT_LEARNING_RATES = (0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_ENV_NAMES = tuple(ENV_NAMES)


class IdealPolicy(NamedTuple):
    """Optimal action per state; ``None`` marks a state excluded from scoring."""

    actions: tuple[int | None, ...]

    def without_terminals(self, graph: WorkflowGraph) -> "IdealPolicy":
        return IdealPolicy(tuple(None if graph.is_terminal(s) else a
                                 for s, a in enumerate(self.actions)))


def _action_value(graph, variant, values, gamma, s, a) -> float:
    return sum(o.probability * (variant.reward(o) + gamma * values[o.next_state])
               for o in graph.outcomes(s, a))


def value_iteration(graph: WorkflowGraph, variant: EnvVariant, gamma: float = 0.9,
                    tolerance: float = 1e-10,
                    initial_values: Sequence[float] | None = None,
                    ) -> tuple[list[float], IdealPolicy]:
    """Synchronous value iteration over defined actions only.

    Terminals stay at 0 and get action 0 in the returned policy.
    """
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    n = graph.state_count
    values = [0.0] * n if initial_values is None else [float(v) for v in initial_values]
    for s in graph.terminals:
        values[s] = 0.0
    live = [s for s in range(n) if not graph.is_terminal(s)]
    while True:
        new = list(values)
        for s in live:
            new[s] = max(_action_value(graph, variant, values, gamma, s, a)
                         for a in graph.actions(s))
        change = max((abs(new[s] - values[s]) for s in live), default=0.0)
        values = new
        if change < tolerance:
            break
    actions = []
    for s in range(n):
        if graph.is_terminal(s):
            actions.append(0)
            continue
        best_a, best_v = None, None
        for a in graph.actions(s):  # ascending, so strict > keeps the lowest index
            v = _action_value(graph, variant, values, gamma, s, a)
            if best_v is None or v > best_v:
                best_a, best_v = a, v
        actions.append(best_a)
    return values, IdealPolicy(tuple(actions))


def get_acc(ideal: IdealPolicy | Sequence[int | None],
            predicted: Policy | Sequence[int | None]) -> float:
    """Fraction of matching entries, rounded half-up to 5 decimals.

    Positions holding ``None`` on either side are skipped.
    """
    a = ideal.actions if isinstance(ideal, IdealPolicy) else tuple(ideal)
    b = predicted.actions if isinstance(predicted, Policy) else tuple(predicted)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} ideal vs {len(b)} predicted")
    true = false = 0
    for x, y in zip(a, b):
        if x is None or y is None:
            continue
        if x == y:
            true += 1
        else:
            false += 1
    if true + false == 0:
        raise ValueError("nothing to compare")
    acc = (Decimal(true) / Decimal(true + false)).quantize(Decimal("0.00001"), ROUND_HALF_UP)
    return float(acc)


def load_ideal_policy(source: bytes | str) -> IdealPolicy:
    """``{"actions": [int | null, ...]}``; null excludes the state from scoring."""
    doc = json.loads(source)
    if not isinstance(doc, dict) or set(doc) != {"actions"} or not isinstance(doc["actions"], list):
        raise ValueError('ideal policy file must be {"actions": [...]}')
    for x in doc["actions"]:
        if x is not None and (not isinstance(x, int) or isinstance(x, bool) or x < 0):
            raise ValueError(f"bad ideal action {x!r}")
    return IdealPolicy(tuple(doc["actions"]))


# -- sweep -------------------------------------------------------------------

def _sweep_base_config() -> TrainConfig:
    return TrainConfig(record_updates=False)


@dataclass(frozen=True)
class SweepConfig:
    env_names: tuple[str, ...] = DEFAULT_ENV_NAMES
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    base_train_config: TrainConfig = field(default_factory=_sweep_base_config)
    seeds: tuple[int, ...] = (0,)
    gamma_oracle: float | None = None  # None: use the training gamma
    exclude_terminals: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "env_names", tuple(self.env_names))
        object.__setattr__(self, "learning_rates", tuple(float(x) for x in self.learning_rates))
        object.__setattr__(self, "seeds", tuple(int(x) for x in self.seeds))
        lrs = self.learning_rates
        if not lrs or any(not 0 < x <= 1 for x in lrs):
            raise ValueError("learning rates must lie in (0, 1]")
        if any(b <= a for a, b in zip(lrs, lrs[1:])):
            raise ValueError("learning rates must be strictly increasing")
        for name in self.env_names:
            parse_kind(name)
        if not self.seeds:
            raise ValueError("need at least one seed")

    def to_dict(self) -> dict:
        return {
            "env_names": list(self.env_names),
            "learning_rates": list(self.learning_rates),
            "seeds": list(self.seeds),
            "base_train_config": self.base_train_config.to_dict(),
            "gamma_oracle": self.gamma_oracle,
            "exclude_terminals": self.exclude_terminals,
        }


CellKey = tuple[str, float, int]


@dataclass
class CellRecord:
    episodes_to_convergence: int
    converged: bool
    policy_accuracy: float
    train_result: TrainResult | None = None


class SweepError(RuntimeError):
    def __init__(self, failures: dict, partial: "SweepResult") -> None:
        keys = ", ".join(map(str, failures))
        super().__init__(f"{len(failures)} sweep cell(s) failed: {keys}")
        self.failures = failures
        self.partial = partial


@dataclass
class SweepResult:
    final_dict: dict[CellKey, CellRecord]
    episode_cap: int

    def rows(self) -> list[tuple[str, float, int, int, bool, float]]:
        """One row per cell sorted by (env order, lr, seed)."""
        order = {name: i for i, name in enumerate(dict.fromkeys(k[0] for k in self.final_dict))}
        keys = sorted(self.final_dict, key=lambda k: (order[k[0]], k[1], k[2]))
        return [(k[0], k[1], k[2], self.final_dict[k].episodes_to_convergence,
                 self.final_dict[k].converged, self.final_dict[k].policy_accuracy)
                for k in keys]

    def env_names(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.final_dict))


def _run_cell(graph: WorkflowGraph, env_name: str, lr: float, seed: int,
              base: TrainConfig, ideal: IdealPolicy) -> CellRecord:
    env = make_env(graph, parse_kind(env_name), seed=seed)
    result = train(env, replace(base, alpha=lr, seed=seed))
    acc = get_acc(ideal, extract_policy(result.q_table))
    if result.converged_at is None:
        return CellRecord(base.episodes, False, acc, result)
    return CellRecord(result.converged_at + 1, True, acc, result)


def _cell_job(args):
    try:
        return args[1:4], _run_cell(*args), None
    except Exception as exc:  # reported per cell
        return args[1:4], None, exc


def run_sweep(graph: WorkflowGraph, config: SweepConfig | None = None,
              workers: int = 1, keep_train_results: bool = True) -> SweepResult:
    """Train one cell per (env, learning rate, seed).

    Cells share nothing mutable, so ``workers > 1`` farms them out to
    processes without changing the result.
    """
    config = config or SweepConfig()
    base = config.base_train_config
    gamma_vi = base.gamma if config.gamma_oracle is None else config.gamma_oracle
    ideals = {}
    for name in config.env_names:
        _, ideal = value_iteration(graph, EnvVariant.default(parse_kind(name)), gamma_vi)
        ideals[name] = ideal.without_terminals(graph) if config.exclude_terminals else ideal
    jobs = [(graph, name, lr, seed, base, ideals[name])
            for name in config.env_names
            for lr in config.learning_rates
            for seed in config.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_cell_job, jobs))
    else:
        outcomes = [_cell_job(j) for j in jobs]
    final, failures = {}, {}
    for key, rec, exc in outcomes:
        if exc is not None:
            failures[key] = exc
            continue
        if not keep_train_results:
            rec.train_result = None
        final[key] = rec
    result = SweepResult(final, base.episodes)
    if failures:
        raise SweepError(failures, result)
    return result


def _curve(result: SweepResult, env_name: str, field_name: str) -> list[tuple[float, float]]:
    cells = [(k, v) for k, v in result.final_dict.items() if k[0] == env_name]
    if not cells:
        raise KeyError(f"environment {env_name!r} not in sweep result")
    by_lr: dict[float, list[float]] = {}
    for (_, lr, _), rec in cells:
        by_lr.setdefault(lr, []).append(getattr(rec, field_name))
    return [(lr, statistics.median(v)) for lr, v in sorted(by_lr.items())]


def convergence_curve(result: SweepResult, env_name: str) -> list[tuple[float, float]]:
    """(lr, median episodes to convergence); unconverged cells count as the cap."""
    return _curve(result, env_name, "episodes_to_convergence")


def accuracy_curve(result: SweepResult, env_name: str) -> list[tuple[float, float]]:
    return _curve(result, env_name, "policy_accuracy")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0..9"`` (inclusive) or ``"1,4,7"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(lo_i, hi_i + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds given")
    return tuple(out)


def iter_cells(result: SweepResult) -> Iterable[tuple[CellKey, CellRecord]]:
    for row in result.rows():
        yield row[:3], result.final_dict[row[:3]]
