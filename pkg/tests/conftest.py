import sys

import pytest
from hypothesis import strategies as st

from malq.graph import LABELS, Outcome, WorkflowGraph, chain_graph, default_graph


@pytest.fixture(scope="session")
def graph67():
    return default_graph()


@pytest.fixture
def chain3():
    return chain_graph(3)


def minimal_graph():
    """Two states, one terminal, a single certain transition."""
    return WorkflowGraph(2, 1, 0, {1: "malware"}, {(0, 0): (Outcome(1.0, 1, True),)})


@st.composite
def graphs(draw, max_states=8, max_actions=4):
    """Valid stochastic graphs; probabilities are multiples of 1/8 so they sum exactly."""
    n = draw(st.integers(2, max_states))
    m = draw(st.integers(1, max_actions))
    terminals = draw(st.dictionaries(st.integers(1, n - 1), st.sampled_from(LABELS),
                                     min_size=1, max_size=n - 1))
    transitions = {}
    for s in range(n):
        if s in terminals:
            continue
        acts = draw(st.lists(st.integers(0, m - 1), min_size=1, max_size=m, unique=True))
        for a in acts:
            k = draw(st.integers(1, 3))
            cuts = sorted(draw(st.lists(st.integers(1, 7), min_size=k - 1, max_size=k - 1,
                                        unique=True)))
            parts = [b - a_ for a_, b in zip([0, *cuts], [*cuts, 8])]
            outs = []
            for p in parts:
                nxt = draw(st.integers(0, n - 1))
                override = draw(st.one_of(st.none(), st.floats(-5, 5, allow_nan=False)))
                outs.append(Outcome(p / 8, nxt, nxt in terminals, override))
            transitions[(s, a)] = tuple(outs)
    return WorkflowGraph(n, m, 0, terminals, transitions)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
