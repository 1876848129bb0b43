"""Workflow MDP: data model, validation, JSON (de)serialization, default layout.

A graph is a set of states, a fixed discrete action space, and for each
*defined* ``(state, action)`` pair an ordered list of probabilistic outcomes.
Terminal states carry a ``"malware"``/``"benign"`` label and have no outgoing
transitions.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

from .rng import SplitMix64

LABELS = ("malware", "benign")
PROB_TOL = 1e-9

# Workflow phases of the default graph, in order; sizes are state counts.
PHASES: tuple[tuple[str, int], ...] = (
    ("acquisition", 1),
    ("process_enumeration", 4),
    ("dll_listing", 6),
    ("handle_monitoring", 7),
    ("network_collection", 7),
    ("registry_analysis", 7),
    ("dump_and_compare", 7),
    ("classification", 28),
)
DEFAULT_STATE_COUNT = 67
DEFAULT_ACTION_SPACE = 10
DEFAULT_PAIR_COUNT = 109


class GraphError(ValueError):
    """Base class for graph file problems."""


class GraphParseError(GraphError):
    """The document is not well-formed JSON of the expected shape."""


class GraphValidationError(GraphError):
    """The document parsed but violates a graph invariant."""


@dataclass(frozen=True)
class Outcome:
    probability: float
    next_state: int
    done: bool
    reward_override: float | None = None


@dataclass(frozen=True)
class GraphStats:
    defined_pair_count: int
    per_state_action_counts: dict[int, int]
    terminal_count: int


@dataclass(frozen=True, eq=True)
class WorkflowGraph:
    """Immutable MDP definition.

    ``transitions`` maps ``(state, action)`` to a tuple of :class:`Outcome`.
    Construction validates every invariant and raises
    :class:`GraphValidationError` on the first violation.
    """

    state_count: int
    action_space_size: int
    initial_state: int
    terminals: Mapping[int, str]
    transitions: Mapping[tuple[int, int], tuple[Outcome, ...]]
    _by_state: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "terminals", dict(sorted(self.terminals.items())))
        object.__setattr__(
            self,
            "transitions",
            {k: tuple(v) for k, v in sorted(self.transitions.items())},
        )
        _validate(self)
        by_state: dict[int, dict[int, tuple[Outcome, ...]]] = {}
        for (s, a), outs in self.transitions.items():
            by_state.setdefault(s, {})[a] = outs
        object.__setattr__(self, "_by_state", by_state)

    def __hash__(self) -> int:
        return hash((self.state_count, self.action_space_size, self.initial_state,
                     tuple(self.terminals.items()), tuple(self.transitions.items())))

    def is_terminal(self, state: int) -> bool:
        return state in self.terminals

    def actions(self, state: int) -> tuple[int, ...]:
        """Defined actions of ``state`` in ascending order."""
        return tuple(self._by_state.get(state, {}))

    def outcomes(self, state: int, action: int) -> tuple[Outcome, ...] | None:
        return self._by_state.get(state, {}).get(action)

    def reachable(self) -> set[int]:
        """States reachable from the initial state (breadth-first)."""
        seen = {self.initial_state}
        queue = deque(seen)
        while queue:
            s = queue.popleft()
            for outs in self._by_state.get(s, {}).values():
                for o in outs:
                    if o.next_state not in seen:
                        seen.add(o.next_state)
                        queue.append(o.next_state)
        return seen


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)
            and math.isfinite(x))


def _validate(g: WorkflowGraph) -> None:
    bad = GraphValidationError
    if not _is_int(g.state_count) or g.state_count <= 0:
        raise bad("state_count must be a positive integer")
    if not _is_int(g.action_space_size) or g.action_space_size <= 0:
        raise bad("action_space_size must be a positive integer")
    if not _is_int(g.initial_state) or not 0 <= g.initial_state < g.state_count:
        raise bad(f"initial_state {g.initial_state!r} out of range")
    for s, label in g.terminals.items():
        if not _is_int(s) or not 0 <= s < g.state_count:
            raise bad(f"terminal state {s!r} out of range")
        if label not in LABELS:
            raise bad(f"terminal {s}: label must be one of {LABELS}, got {label!r}")
    with_actions = set()
    for (s, a), outs in g.transitions.items():
        where = f"state {s}, action {a}"
        if not _is_int(s) or not 0 <= s < g.state_count:
            raise bad(f"{where}: state out of range")
        if not _is_int(a) or not 0 <= a < g.action_space_size:
            raise bad(f"{where}: action out of range")
        if s in g.terminals:
            raise bad(f"{where}: terminal states must not define transitions")
        if not outs:
            raise bad(f"{where}: no outcomes")
        total = 0.0
        for o in outs:
            if not _is_number(o.probability) or not 0.0 < o.probability <= 1.0:
                raise bad(f"{where}: probability {o.probability!r} not in (0, 1]")
            if not _is_int(o.next_state) or not 0 <= o.next_state < g.state_count:
                raise bad(f"{where}: next state {o.next_state!r} out of range")
            if o.done != (o.next_state in g.terminals):
                raise bad(f"{where}: done flag must be true iff next state "
                          f"{o.next_state} is terminal")
            if o.reward_override is not None and not _is_number(o.reward_override):
                raise bad(f"{where}: reward_override must be a finite number")
            total += o.probability
        if abs(total - 1.0) > PROB_TOL:
            raise bad(f"{where}: probabilities sum ≠ 1 (got {total!r})")
        with_actions.add(s)
    for s in range(g.state_count):
        if s not in g.terminals and s not in with_actions:
            raise bad(f"state {s}: non-terminal state has no defined action")


def graph_stats(graph: WorkflowGraph) -> GraphStats:
    counts = {s: 0 for s in range(graph.state_count)}
    for s, _ in graph.transitions:
        counts[s] += 1
    return GraphStats(
        defined_pair_count=sum(counts.values()),
        per_state_action_counts=counts,
        terminal_count=len(graph.terminals),
    )


# -- serialization -----------------------------------------------------------

_TOP_KEYS = {"state_count", "action_space_size", "initial_state", "terminals",
             "transitions"}


def _expect_keys(obj, required: set[str], optional: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise GraphParseError(f"{where}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise GraphParseError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise GraphParseError(f"{where}: missing keys {sorted(missing)}")


def graph_from_dict(doc) -> WorkflowGraph:
    _expect_keys(doc, _TOP_KEYS, set(), "graph")
    terminals: dict[int, str] = {}
    if not isinstance(doc["terminals"], list):
        raise GraphParseError("terminals: expected an array")
    for i, t in enumerate(doc["terminals"]):
        _expect_keys(t, {"state", "label"}, set(), f"terminals[{i}]")
        if t["state"] in terminals:
            raise GraphValidationError(f"terminal {t['state']} listed twice")
        terminals[t["state"]] = t["label"]
    transitions: dict[tuple[int, int], tuple[Outcome, ...]] = {}
    if not isinstance(doc["transitions"], list):
        raise GraphParseError("transitions: expected an array")
    for i, tr in enumerate(doc["transitions"]):
        _expect_keys(tr, {"state", "action", "outcomes"}, set(), f"transitions[{i}]")
        if not isinstance(tr["outcomes"], list):
            raise GraphParseError(f"transitions[{i}].outcomes: expected an array")
        key = (tr["state"], tr["action"])
        if not all(_is_int(k) for k in key):
            raise GraphValidationError(f"transitions[{i}]: state/action must be integers")
        if key in transitions:
            raise GraphValidationError(
                f"state {key[0]}, action {key[1]}: transition defined twice")
        outs = []
        for j, o in enumerate(tr["outcomes"]):
            _expect_keys(o, {"p", "next", "done"}, {"reward_override"},
                         f"transitions[{i}].outcomes[{j}]")
            if not isinstance(o["done"], bool):
                raise GraphParseError(f"transitions[{i}].outcomes[{j}].done: expected bool")
            outs.append(Outcome(probability=o["p"], next_state=o["next"],
                                done=o["done"], reward_override=o.get("reward_override")))
        transitions[key] = tuple(outs)
    return WorkflowGraph(
        state_count=doc["state_count"],
        action_space_size=doc["action_space_size"],
        initial_state=doc["initial_state"],
        terminals=terminals,
        transitions=transitions,
    )


def graph_to_dict(graph: WorkflowGraph) -> dict:
    transitions = []
    for (s, a), outs in graph.transitions.items():
        rows = []
        for o in outs:
            row = {"p": o.probability, "next": o.next_state, "done": o.done}
            if o.reward_override is not None:
                row["reward_override"] = o.reward_override
            rows.append(row)
        transitions.append({"state": s, "action": a, "outcomes": rows})
    return {
        "state_count": graph.state_count,
        "action_space_size": graph.action_space_size,
        "initial_state": graph.initial_state,
        "terminals": [{"state": s, "label": lab} for s, lab in graph.terminals.items()],
        "transitions": transitions,
    }


def load_graph(source: bytes | str) -> WorkflowGraph:
    """Parse and validate a graph document (bytes must be UTF-8 without BOM)."""
    if isinstance(source, bytes):
        if source.startswith(b"\xef\xbb\xbf"):
            raise GraphParseError("graph file must not start with a byte-order mark")
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GraphParseError(f"graph file is not UTF-8: {exc}") from None
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"malformed graph JSON: {exc}") from None
    return graph_from_dict(doc)


def dump_graph(graph: WorkflowGraph) -> bytes:
    return (json.dumps(graph_to_dict(graph), indent=1) + "\n").encode("utf-8")


def load_graph_file(path) -> WorkflowGraph:
    with open(path, "rb") as fh:
        return load_graph(fh.read())


def default_graph() -> WorkflowGraph:
    """The committed canonical graph (``generate_default_graph(0)``)."""
    data = resources.files("malq").joinpath("data/default.graph.json").read_bytes()
    return load_graph(data)


# -- default graph generation ------------------------------------------------

def phase_layers() -> list[tuple[str, range]]:
    """State-id ranges of each workflow phase in the default layout."""
    out, start = [], 0
    for name, size in PHASES:
        out.append((name, range(start, start + size)))
        start += size
    return out


def phase_of(state: int) -> str:
    for name, ids in phase_layers():
        if state in ids:
            return name
    raise ValueError(f"state {state} outside the default layout")


_CLASSIFY = -1  # placeholder child: all outcomes terminal
_PROB_UNITS = 20  # outcome probabilities are multiples of 1/20
_MAX_ACTIONS = 10
_FORWARD_P = 0.8


def _action_depth(child: int, depth: dict[int, int]) -> int:
    return 1 if child == _CLASSIFY else 1 + depth[child]


def _draw_layout(rng: SplitMix64, analysis: list[list[int]]
                 ) -> tuple[dict[int, list[int]], dict[int, int]] | None:
    """Best child per state plus parents for every state, or None on a dead end.

    Children are next-phase states or higher-numbered states of the same
    phase ("re-examine" moves); only the last analysis phase classifies. A
    child may join a state as a non-best action only if it is strictly
    longer than that state's best, which keeps every argmax unique.
    """
    depth: dict[int, int] = {}
    children: dict[int, list[int]] = {}
    last = len(analysis) - 1
    for li in range(last, -1, -1):
        layer = analysis[li]
        nxt = analysis[li + 1] if li < last else []
        for s in reversed(layer):
            lateral = [c for c in layer if c > s]
            if li == last:
                best = _CLASSIFY
            elif not lateral or rng.random() < _FORWARD_P:
                best = rng.choice(nxt)
            else:
                best = rng.choice(lateral)
            children[s] = [best]
            depth[s] = _action_depth(best, depth)
        if not nxt:
            continue
        has_parent = {c for s in nxt for c in children[s]}
        has_parent.update(c for s in layer for c in children[s])
        orphans = [c for c in nxt if c not in has_parent]
        rng.shuffle(orphans)
        for c in orphans:
            # a parent earlier in (phase, id) order keeps reachability inductive
            hosts = [s for s in layer + [s for s in nxt if s < c]
                     if _action_depth(children[s][0], depth) < 1 + depth[c]
                     and len(children[s]) < _MAX_ACTIONS]
            if not hosts:
                return None
            children[rng.choice(hosts)].append(c)
    return children, depth


def _fill_budget(rng: SplitMix64, analysis: list[list[int]],
                 children: dict[int, list[int]], depth: dict[int, int]) -> bool:
    """Add strictly-longer alternatives, least-busy states first, up to the budget."""
    missing = DEFAULT_PAIR_COUNT - sum(len(k) for k in children.values())
    if missing < 0:
        return False
    options = []
    for li, layer in enumerate(analysis):
        nxt = analysis[li + 1] if li + 1 < len(analysis) else []
        for s in layer:
            best = _action_depth(children[s][0], depth)
            options += [(s, c) for c in nxt + [c for c in layer if c > s]
                        if c not in children[s] and 1 + depth[c] > best]
    indeg = {s: 0 for layer in analysis for s in layer}
    for ks in children.values():
        for c in ks:
            if c != _CLASSIFY:
                indeg[c] += 1
    while missing:
        open_ = [(s, c) for s, c in options
                 if c not in children[s] and len(children[s]) < _MAX_ACTIONS]
        if not open_:
            return False
        # balance in-degree first so no state hangs off a single rare parent
        low = min((indeg[c], len(children[s])) for s, c in open_)
        s, c = rng.choice([(s, c) for s, c in open_ if (indeg[c], len(children[s])) == low])
        children[s].append(c)
        indeg[c] += 1
        missing -= 1
    return True


def generate_default_graph(seed: int = 0) -> WorkflowGraph:
    """Deterministic layered DAG following the default workflow phases.

    Actions advance to the next phase or re-examine within the current one
    (towards higher state ids, so the graph stays acyclic). Every action of
    the dump-and-compare phase that does not re-examine classifies, splitting
    probability over two malware and two benign terminals. Each state has
    exactly one action with the fewest steps to classification, so the
    optimal policy has no ties under any step-penalty / terminal-reward
    setting.
    """
    rng = SplitMix64.stream(seed, 0x6A7)
    layers = [list(ids) for _, ids in phase_layers()]
    analysis, terminals = layers[:-1], layers[-1]
    malware = terminals[: len(terminals) // 2]
    benign = terminals[len(terminals) // 2:]
    label = {s: "malware" for s in malware} | {s: "benign" for s in benign}

    for _attempt in range(10_000):
        drawn = _draw_layout(rng, analysis)
        if drawn is None:
            continue
        children, depth = drawn
        n_classify = sum(ks.count(_CLASSIFY) for ks in children.values())
        if 2 * n_classify >= len(malware) and _fill_budget(rng, analysis, children, depth):
            break
    else:  # pragma: no cover - never hit for the layout above
        raise RuntimeError("could not build the default layout")

    # classifying actions fan out to two malware and two benign terminals;
    # the first passes through the shuffled cycles hit every terminal
    mal_cycle, ben_cycle = list(malware), list(benign)
    rng.shuffle(mal_cycle)
    rng.shuffle(ben_cycle)
    transitions: dict[tuple[int, int], tuple[Outcome, ...]] = {}
    k = 0
    for s in sorted(children):
        kids = children[s]
        rng.shuffle(kids)
        acts = sorted(rng.sample(range(DEFAULT_ACTION_SPACE), len(kids)))
        for a, c in zip(acts, kids):
            if c == _CLASSIFY:
                ends = [mal_cycle[(2 * k) % len(mal_cycle)],
                        mal_cycle[(2 * k + 1) % len(mal_cycle)],
                        ben_cycle[(2 * k) % len(ben_cycle)],
                        ben_cycle[(2 * k + 1) % len(ben_cycle)]]
                k += 1
                cuts = sorted(rng.sample(range(1, _PROB_UNITS), len(ends) - 1))
                parts = [b - a for a, b in zip([0] + cuts, cuts + [_PROB_UNITS])]
                outs = tuple(Outcome(n / _PROB_UNITS, t, True) for n, t in zip(parts, ends))
            else:
                outs = (Outcome(1.0, c, False),)
            transitions[(s, a)] = outs

    return WorkflowGraph(
        state_count=DEFAULT_STATE_COUNT,
        action_space_size=DEFAULT_ACTION_SPACE,
        initial_state=0,
        terminals=label,
        transitions=transitions,
    )


def chain_graph(length: int = 3, action: int = 0, action_space_size: int = 2,
                label: str = "malware") -> WorkflowGraph:
    """Deterministic chain ``0 -> 1 -> ... -> length-1`` (last state terminal)."""
    transitions = {
        (s, action): (Outcome(1.0, s + 1, s + 1 == length - 1),)
        for s in range(length - 1)
    }
    return WorkflowGraph(length, action_space_size, 0, {length - 1: label}, transitions)


def deterministic_graph(state_count: int, action_space_size: int,
                        edges: Iterable[tuple[int, int, int]],
                        terminals: Mapping[int, str]) -> WorkflowGraph:
    """Graph whose every outcome has probability 1; ``edges`` are (s, a, next)."""
    transitions = {
        (s, a): (Outcome(1.0, n, n in terminals),) for s, a, n in edges
    }
    return WorkflowGraph(state_count, action_space_size, 0, dict(terminals), transitions)


def _steps_to_terminal(n: int, edges: Mapping[tuple[int, int], int],
                       terminals: Mapping[int, str]) -> list[int]:
    """Fewest steps from each state to a terminal (``n + 1`` if none)."""
    dist = [0 if s in terminals else n + 1 for s in range(n)]
    for _ in range(n):
        for (s, _a), t in edges.items():
            dist[s] = min(dist[s], 1 + dist[t])
    return dist


def random_deterministic_graph(seed: int, max_states: int = 10,
                               max_actions: int = 4) -> WorkflowGraph:
    """Small random deterministic MDP with a unique optimal policy.

    The highest ids are terminals. Every state above 0 gets a parent below
    it and every live state an edge to a higher id, so a terminal is always
    reachable; other edges may point anywhere, cycles included. With
    uniform rewards the optimal action value falls strictly with the number
    of steps to a terminal, so where two actions tie for the shortest route
    all but one become self-loops. Live states stay reachable from 0
    (drawn again otherwise); a terminal may lose its only parent.
    """
    rng = SplitMix64.stream(seed, 0x5EED)
    n = 3 + rng.randbelow(max_states - 2)
    m = 2 + rng.randbelow(max_actions - 1)
    n_term = 1 + rng.randbelow(min(3, n - 2))
    terminals = {s: LABELS[rng.randbelow(2)] for s in range(n - n_term, n)}
    live = range(n - n_term)
    while True:
        edges: dict[tuple[int, int], int] = {}

        def free(s: int) -> list[int]:
            return [a for a in range(m) if (s, a) not in edges]

        # spanning tree: each live state has at least two slots, so a parent
        # with a free one always exists
        for c in range(1, n):
            parent = rng.choice([p for p in live if p < c and free(p)])
            edges[(parent, rng.choice(free(parent)))] = c
        for s in live:
            if not any(t > s for (p, _), t in edges.items() if p == s):
                edges[(s, rng.choice(free(s)))] = s + 1 + rng.randbelow(n - s - 1)
        for s in live:
            for a in free(s):
                if rng.random() < 0.4:
                    edges[(s, a)] = rng.randbelow(n)
        changed = True
        while changed:
            changed = False
            dist = _steps_to_terminal(n, edges, terminals)
            for s in live:
                best = [a for (p, a), t in sorted(edges.items()) if p == s and 1 + dist[t] == dist[s]]
                for a in best[1:]:
                    edges[(s, a)] = s
                    changed = True
            # one self-loop per state is enough; drop duplicates
            for s in live:
                loops = [a for (p, a), t in sorted(edges.items()) if p == s and t == s]
                for a in loops[1:]:
                    del edges[(s, a)]
        g = deterministic_graph(n, m, [(s, a, t) for (s, a), t in edges.items()], terminals)
        if set(live) <= g.reachable():
            return g
