"""Greedy-policy trajectories and the command timings recorded along them.

A command map ties workflow states to the commands an analyst would run
there. Trajectories are replayed against a map either by drawing simulated
latencies or, with explicit opt-in, by spawning the commands.
"""

from __future__ import annotations

import enum
import json
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, NamedTuple, Sequence

from .env import EnvKind, make_env
from .graph import WorkflowGraph
from .qlearning import Policy
from .rng import SplitMix64

CAP_REACHED = "cap-reached"
SIMULATED = "simulated"
DEFAULT_SIM_MEDIAN_S = 0.5
DEFAULT_SIM_SIGMA = 0.5
TRACE_STREAM = 3
SHIPPED_SCENARIOS = ("wannacry", "cerber", "cridex")


class CommandMapError(ValueError):
    pass


@dataclass(frozen=True)
class CommandEntry:
    cmds: tuple[str, ...]
    sim_median_s: float = DEFAULT_SIM_MEDIAN_S
    sim_sigma: float = DEFAULT_SIM_SIGMA


@dataclass(frozen=True)
class CommandMap:
    scenario_label: str
    entries: Mapping[int, CommandEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", dict(sorted(self.entries.items())))
        for state, entry in self.entries.items():
            if not isinstance(state, int) or isinstance(state, bool) or state < 0:
                raise CommandMapError(f"state {state!r}: must be a non-negative integer")
            if any(not isinstance(c, str) or not c.strip() for c in entry.cmds):
                raise CommandMapError(f"state {state}: command strings must be non-empty")
            if not entry.sim_median_s > 0 or not entry.sim_sigma >= 0:
                raise CommandMapError(f"state {state}: need sim_median_s > 0 and sim_sigma >= 0")

    def commands(self, state: int) -> tuple[str, ...]:
        entry = self.entries.get(state)
        return entry.cmds if entry else ()

    def check_against(self, graph: WorkflowGraph) -> "CommandMap":
        for state in self.entries:
            if state >= graph.state_count:
                raise CommandMapError(
                    f"state {state}: not below the graph's state_count {graph.state_count}")
        return self


def load_command_map(source: bytes | str, graph: WorkflowGraph | None = None) -> CommandMap:
    try:
        doc = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CommandMapError(f"command map is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"scenario", "commands"}:
        raise CommandMapError('command map must be {"scenario": ..., "commands": [...]}')
    if not isinstance(doc["scenario"], str) or not doc["scenario"]:
        raise CommandMapError("scenario must be a non-empty string")
    if not isinstance(doc["commands"], list):
        raise CommandMapError("commands must be an array")
    entries: dict[int, CommandEntry] = {}
    allowed = {"state", "cmds", "sim_median_s", "sim_sigma"}
    for item in doc["commands"]:
        if not isinstance(item, dict) or not {"state", "cmds"} <= set(item) <= allowed:
            raise CommandMapError(f"bad command entry {item!r}")
        state = item["state"]
        if state in entries:
            raise CommandMapError(f"state {state}: listed twice")
        if not isinstance(item["cmds"], list):
            raise CommandMapError(f"state {state}: cmds must be an array")
        for key in ("sim_median_s", "sim_sigma"):
            v = item.get(key)
            if v is not None and (not isinstance(v, (int, float)) or isinstance(v, bool)):
                raise CommandMapError(f"state {state}: {key} must be a number")
        entries[state] = CommandEntry(
            tuple(item["cmds"]),
            float(item.get("sim_median_s", DEFAULT_SIM_MEDIAN_S)),
            float(item.get("sim_sigma", DEFAULT_SIM_SIGMA)),
        )
    cmap = CommandMap(doc["scenario"], entries)
    return cmap.check_against(graph) if graph is not None else cmap


def shipped_command_map(name: str) -> CommandMap:
    """One of the bundled placeholder maps: ``wannacry``, ``cerber``, ``cridex``."""
    if name not in SHIPPED_SCENARIOS:
        raise KeyError(f"no shipped command map {name!r}")
    data = resources.files("malq").joinpath("data", "commands", f"{name}.json").read_bytes()
    return load_command_map(data)


class Step(NamedTuple):
    state: int
    action: int
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    terminal_label: str

    def visited_states(self) -> list[int]:
        """Start state, then each state entered by a move (self-loops skipped)."""
        if not self.steps:
            return []
        out = [self.steps[0].state]
        for st in self.steps:
            if st.next_state != st.state:
                out.append(st.next_state)
        return out


def build_trajectory(graph: WorkflowGraph, policy: Policy | Sequence[int], seed: int = 0,
                     step_cap: int = 500, kind: EnvKind | str = EnvKind.BASE) -> Trajectory:
    """Follow ``policy`` greedily from the initial state.

    Stochastic outcomes are sampled by an environment seeded with ``seed``;
    rewards are irrelevant here so the variant only matters for parity with
    training.
    """
    if step_cap <= 0:
        raise ValueError("step_cap must be positive")
    actions = policy.actions if isinstance(policy, Policy) else tuple(policy)
    if len(actions) != graph.state_count:
        raise ValueError(f"policy has {len(actions)} entries for {graph.state_count} states")
    env = make_env(graph, kind, seed=seed)
    state = env.reset()
    steps: list[Step] = []
    label = CAP_REACHED
    while len(steps) < step_cap:
        nxt, _, done, _ = env.step(actions[state])
        steps.append(Step(state, actions[state], nxt))
        state = nxt
        if done:
            label = graph.terminals[nxt]
            break
    return Trajectory(tuple(steps), label)


class Backend(enum.Enum):
    SIMULATE = "simulate"
    SHELL = "shell"


class TimingPoint(NamedTuple):
    command: str
    state: int
    duration: float
    exit_status: int | str


@dataclass(frozen=True)
class TimingSeries:
    scenario_label: str
    points: tuple[TimingPoint, ...]


class ShellNotAllowed(PermissionError):
    pass


def _run_shell(cmd: str) -> tuple[float, int]:
    t0 = time.perf_counter()
    try:
        proc = subprocess.run(cmd, shell=True, stdout=subprocess.DEVNULL,
                              stderr=subprocess.DEVNULL, check=False)
        status = proc.returncode
    except OSError:
        status = -1
    return max(time.perf_counter() - t0, 0.0), status


def execute_trajectory(trajectory: Trajectory, cmap: CommandMap,
                       backend: Backend | str = Backend.SIMULATE, seed: int = 0,
                       allow_shell: bool = False) -> TimingSeries:
    """Run or simulate every mapped command along the visited states, in order."""
    backend = Backend(backend)
    if backend is Backend.SHELL and not allow_shell:
        raise ShellNotAllowed("shell backend needs allow_shell=True")
    rng = SplitMix64.stream(seed, TRACE_STREAM)
    points: list[TimingPoint] = []
    for state in trajectory.visited_states():
        entry = cmap.entries.get(state)
        if entry is None:
            continue
        for cmd in entry.cmds:
            if backend is Backend.SIMULATE:
                d = rng.lognormal(entry.sim_median_s, entry.sim_sigma)
                points.append(TimingPoint(cmd, state, d, SIMULATED))
            else:
                d, status = _run_shell(cmd)
                points.append(TimingPoint(cmd, state, d, status))
    return TimingSeries(cmap.scenario_label, tuple(points))
