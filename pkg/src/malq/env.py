"""Reset/step semantics over a :class:`WorkflowGraph` in three reward variants.

Rewards are not stored in the graph: each variant supplies a step penalty and
a terminal reward, and an outcome's ``reward_override`` (if any) wins over
both. Actions without a defined transition are penalized self-loops.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, NamedTuple

from .graph import Outcome, WorkflowGraph
from .rng import SplitMix64

ENV_STREAM = 1


class EnvKind(enum.Enum):
    BASE = "base"
    REWARD_SHAPED = "reward"
    TIME_PRESSURE = "time"


# sweep identifiers, in sweep order
ENV_NAMES: dict[str, EnvKind] = {
    "env_new1": EnvKind.BASE,
    "env_new2": EnvKind.REWARD_SHAPED,
    "env_new3": EnvKind.TIME_PRESSURE,
}

_DEFAULTS = {
    EnvKind.BASE: (-0.04, 2.0),
    EnvKind.REWARD_SHAPED: (-0.04, 4.0),
    EnvKind.TIME_PRESSURE: (-0.1, 4.0),
}


def parse_kind(name: str | EnvKind) -> EnvKind:
    """Accept an :class:`EnvKind`, its value (``base``/``reward``/``time``),
    its member name, or a sweep identifier such as ``env_new2``."""
    if isinstance(name, EnvKind):
        return name
    if name in ENV_NAMES:
        return ENV_NAMES[name]
    for kind in EnvKind:
        if name in (kind.value, kind.name, kind.name.lower()):
            return kind
    raise ValueError(f"unknown environment {name!r}")


class EnvContractError(RuntimeError):
    """Raised when the caller violates the reset/step protocol."""


@dataclass(frozen=True)
class EnvVariant:
    kind: EnvKind
    step_penalty: float
    terminal_reward: float

    def __post_init__(self) -> None:
        if not self.step_penalty < 0:
            raise ValueError(f"step_penalty must be negative, got {self.step_penalty}")
        if not self.terminal_reward > 0:
            raise ValueError(f"terminal_reward must be positive, got {self.terminal_reward}")

    @classmethod
    def default(cls, kind: EnvKind | str, step_penalty: float | None = None,
                terminal_reward: float | None = None) -> "EnvVariant":
        kind = parse_kind(kind)
        sp, tr = _DEFAULTS[kind]
        return cls(kind,
                   sp if step_penalty is None else step_penalty,
                   tr if terminal_reward is None else terminal_reward)

    def reward(self, outcome: Outcome) -> float:
        if outcome.reward_override is not None:
            return outcome.reward_override
        return self.terminal_reward if outcome.done else self.step_penalty


class StepResult(NamedTuple):
    next_state: int
    reward: float
    done: bool
    info: Mapping[str, object]


_MOVED = MappingProxyType({"noop": False})
_NOOP = MappingProxyType({"noop": True})


class Environment:
    """Single-owner mutable environment; many may share one graph."""

    def __init__(self, graph: WorkflowGraph, variant: EnvVariant, seed: int = 0) -> None:
        self.graph = graph
        self.variant = variant
        self.seed = seed
        self.rng = SplitMix64.stream(seed, ENV_STREAM)
        self.current_state = graph.initial_state
        # per state: action -> (cumulative probs, results)
        self._table: list[dict[int, tuple[list[float], list[StepResult]]]] = []
        for s in range(graph.state_count):
            row = {}
            for a in graph.actions(s):
                cum, results, acc = [], [], 0.0
                for o in graph.outcomes(s, a):
                    acc += o.probability
                    cum.append(acc)
                    results.append(StepResult(o.next_state, variant.reward(o), o.done, _MOVED))
                row[a] = (cum, results)
            self._table.append(row)

    @property
    def action_space_size(self) -> int:
        return self.graph.action_space_size

    def reset(self) -> int:
        """Back to the initial state; the outcome stream is *not* reseeded."""
        self.current_state = self.graph.initial_state
        return self.current_state

    def step(self, action: int) -> StepResult:
        s = self.current_state
        if s in self.graph.terminals:
            raise EnvContractError(f"step from terminal state {s}; call reset() first")
        if not 0 <= action < self.graph.action_space_size:
            raise ValueError(f"action {action} outside [0, {self.graph.action_space_size})")
        entry = self._table[s].get(action)
        if entry is None:
            return StepResult(s, self.variant.step_penalty, False, _NOOP)
        cum, results = entry
        if len(results) == 1:
            res = results[0]
        else:
            # clamp guards against the last cumulative sum landing just under 1
            i = bisect.bisect_right(cum, self.rng.random() * cum[-1])
            res = results[min(i, len(results) - 1)]
        self.current_state = res.next_state
        return res

    def available_actions(self, state: int) -> frozenset[int]:
        if not 0 <= state < self.graph.state_count:
            raise ValueError(f"state {state} out of range")
        return frozenset(self.graph.actions(state))


def make_env(graph: WorkflowGraph, kind: EnvKind | str = EnvKind.BASE, seed: int = 0,
             step_penalty: float | None = None,
             terminal_reward: float | None = None) -> Environment:
    return Environment(graph, EnvVariant.default(kind, step_penalty, terminal_reward), seed)
