"""Tabular Q-learning with a linearly decayed epsilon-greedy behaviour policy."""

from __future__ import annotations

import enum
from array import array
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import NamedTuple, Sequence

import numpy as np

from .env import Environment
from .rng import SplitMix64

AGENT_STREAM = 2

_HALF = Decimal("0.5")

STORAGE_DTYPE = np.dtype([("current_q", "f8"), ("new_q", "f8"),
                          ("episode", "i8"), ("action", "i8")])


class ConvergenceMode(enum.Enum):
    # stop at the first nonzero update smaller than the threshold
    PER_UPDATE = "per-update"
    # stop after an episode whose largest update is below the threshold
    EPISODE_MAX_DELTA = "episode-max-delta"


@dataclass
class QTable:
    values: np.ndarray

    @classmethod
    def zeros(cls, state_count: int, action_space_size: int) -> "QTable":
        return cls(np.zeros((state_count, action_space_size), dtype=np.float64))

    @property
    def state_count(self) -> int:
        return self.values.shape[0]

    @property
    def action_space_size(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, QTable) and np.array_equal(self.values, other.values)


class Policy(NamedTuple):
    actions: tuple[int, ...]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for :func:`train`.

    ``epsilon_decay_value=None`` means ``(epsilon_start - epsilon_min) / episodes``.
    ``watch`` lists the (state, action) pairs copied into ``storage_new``;
    ``None`` watches every action of the initial state. Setting
    ``record_updates=False`` leaves ``storage`` empty (sweeps use this to
    bound memory).
    """

    alpha: float = 0.4
    gamma: float = 0.9
    epsilon_start: float = 0.9
    epsilon_min: float = 0.01
    epsilon_decay_value: float | None = None
    episodes: int = 10_000
    max_steps_per_episode: int = 500
    convergence_threshold: float = 1e-4
    convergence_mode: ConvergenceMode = ConvergenceMode.EPISODE_MAX_DELTA
    convergence_patience: int = 100
    decay_per_step: bool = False
    seed: int = 0
    watch: tuple[tuple[int, int], ...] | None = None
    record_updates: bool = True

    def __post_init__(self) -> None:
        if isinstance(self.convergence_mode, str):
            object.__setattr__(self, "convergence_mode", ConvergenceMode(self.convergence_mode))
        if self.watch is not None:
            object.__setattr__(self, "watch", tuple(tuple(p) for p in self.watch))
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 <= self.epsilon_start <= 1:
            raise ValueError("epsilon_start must be in [0, 1]")
        if not 0 <= self.epsilon_min <= self.epsilon_start:
            raise ValueError("need 0 <= epsilon_min <= epsilon_start")
        if self.epsilon_decay_value is not None and self.epsilon_decay_value < 0:
            raise ValueError("epsilon_decay_value must be non-negative")
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        if self.max_steps_per_episode <= 0:
            raise ValueError("max_steps_per_episode must be positive")
        if self.convergence_patience < 1:
            raise ValueError("convergence_patience must be at least 1")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be positive")

    @property
    def decay_value(self) -> float:
        if self.epsilon_decay_value is not None:
            return self.epsilon_decay_value
        if self.episodes == 0:
            return 0.0
        return (self.epsilon_start - self.epsilon_min) / self.episodes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convergence_mode"] = self.convergence_mode.value
        d["watch"] = None if self.watch is None else [list(p) for p in self.watch]
        return d


@dataclass
class TrainResult:
    q_table: QTable
    reward_list: list[tuple[float, int, int]]
    storage: np.ndarray
    storage_new: list[tuple[int, int, float, float, int]]
    epsilon_trace: list[float]
    converged_at: int | None = None
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def episodes_run(self) -> int:
        return len(self.reward_list)


def select_action(q_row: Sequence[float], epsilon: float, rng: SplitMix64,
                  action_space_size: int) -> int:
    if rng.random() < epsilon:
        return rng.randbelow(action_space_size)
    row = list(q_row)
    return row.index(max(row))


def bellman_update(current_q: float, reward: float, max_next_q: float,
                   alpha: float, gamma: float) -> float:
    """``current_q + alpha * (reward + gamma * max_next_q - current_q)``.

    Evaluated as a convex blend so that ``alpha == 1`` returns the target
    exactly.
    """
    return (1.0 - alpha) * current_q + alpha * (reward + gamma * max_next_q)


def decay_epsilon(epsilon: float, epsilon_decay_value: float, epsilon_min: float) -> float:
    """``max(epsilon - epsilon_decay_value * 0.5, epsilon_min)``.

    Worked in decimal on the shortest float reprs, so 0.9 - 0.001 * 0.5 is
    0.8995 rather than its binary neighbour 0.8995000000000001.
    """
    eps = Decimal(repr(float(epsilon))) - Decimal(repr(float(epsilon_decay_value))) * _HALF
    return max(float(eps), epsilon_min)


def extract_policy(q: QTable) -> Policy:
    # np.argmax returns the first maximum: lowest-index tie-break
    return Policy(tuple(int(a) for a in np.argmax(q.values, axis=1)))


def train(env: Environment, config: TrainConfig) -> TrainResult:
    graph = env.graph
    n_actions = graph.action_space_size
    q = [[0.0] * n_actions for _ in range(graph.state_count)]
    rng = SplitMix64.stream(config.seed, AGENT_STREAM)

    # constants hoisted for the inner loop
    alpha, gamma = config.alpha, config.gamma
    keep = 1.0 - alpha
    threshold = config.convergence_threshold
    per_update = config.convergence_mode is ConvergenceMode.PER_UPDATE
    decay, eps_min = config.decay_value, config.epsilon_min
    max_steps = config.max_steps_per_episode
    record = config.record_updates
    per_step = config.decay_per_step
    patience, quiet = config.convergence_patience, 0
    if config.watch is None:
        watch = {(graph.initial_state, a) for a in range(n_actions)}
    else:
        watch = set(config.watch)
    rand, randbelow, step = rng.random, rng.randbelow, env.step

    cur_col, new_col = array("d"), array("d")
    ep_col, act_col = array("q"), array("q")
    storage_new: list[tuple[int, int, float, float, int]] = []
    reward_list: list[tuple[float, int, int]] = []
    epsilon_trace: list[float] = []
    converged_at = None
    epsilon = config.epsilon_start

    for episode in range(config.episodes):
        state = env.reset()
        episodic_reward = 0.0
        steps = 0
        epsilon_trace.append(epsilon)
        max_delta = 0.0
        stop = False
        done = False
        while not done and steps < max_steps:
            row = q[state]
            if rand() < epsilon:
                action = randbelow(n_actions)
            else:
                action = row.index(max(row))
            next_state, reward, done, _ = step(action)
            episodic_reward += reward
            steps += 1

            current_q = row[action]
            # same arithmetic as bellman_update
            new_q = keep * current_q + alpha * (reward + gamma * max(q[next_state]))
            row[action] = new_q
            if (state, action) in watch:
                storage_new.append((state, action, current_q, new_q, episode))
            if record:
                cur_col.append(current_q)
                new_col.append(new_q)
                ep_col.append(episode)
                act_col.append(action)
            state = next_state
            if per_step:
                epsilon = decay_epsilon(epsilon, decay, eps_min)

            delta = abs(new_q - current_q)
            if per_update:
                if delta < threshold and new_q != current_q:
                    stop = True
                    break
            elif delta > max_delta:
                max_delta = delta

        reward_list.append((episodic_reward, episode, steps))
        if not per_update and steps:
            quiet = quiet + 1 if max_delta < threshold else 0
            stop = quiet >= patience
        if stop:
            converged_at = episode
            break
        if not per_step:
            epsilon = decay_epsilon(epsilon, decay, eps_min)

    storage = np.empty(len(cur_col), dtype=STORAGE_DTYPE)
    if len(cur_col):
        storage["current_q"] = np.frombuffer(cur_col, dtype=np.float64)
        storage["new_q"] = np.frombuffer(new_col, dtype=np.float64)
        storage["episode"] = np.frombuffer(ep_col, dtype=np.int64)
        storage["action"] = np.frombuffer(act_col, dtype=np.int64)
    return TrainResult(
        q_table=QTable(np.array(q, dtype=np.float64)),
        reward_list=reward_list,
        storage=storage,
        storage_new=storage_new,
        epsilon_trace=epsilon_trace,
        converged_at=converged_at,
        config=config,
    )
