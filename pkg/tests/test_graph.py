import json

import pytest
from hypothesis import given, settings

from malq.env import EnvKind, EnvVariant
from malq.graph import (DEFAULT_PAIR_COUNT, PHASES, GraphParseError, GraphValidationError,
                        Outcome, WorkflowGraph, dump_graph,
                        generate_default_graph, graph_from_dict, graph_stats, graph_to_dict,
                        load_graph, phase_layers, phase_of, random_deterministic_graph)
from malq.sweep import value_iteration

from conftest import graphs, minimal_graph

MINIMAL_DOC = {
    "state_count": 2, "action_space_size": 1, "initial_state": 0,
    "terminals": [{"state": 1, "label": "malware"}],
    "transitions": [{"state": 0, "action": 0,
                     "outcomes": [{"p": 1.0, "next": 1, "done": True}]}],
}


def doc_bytes(doc):
    return json.dumps(doc).encode()


def test_minimal_file_loads():
    g = load_graph(doc_bytes(MINIMAL_DOC))
    stats = graph_stats(g)
    assert stats.defined_pair_count == 1
    assert stats.terminal_count == 1
    assert g == minimal_graph()


def test_probabilities_must_sum_to_one():
    doc = json.loads(json.dumps(MINIMAL_DOC))
    doc["state_count"] = 3
    doc["terminals"].append({"state": 2, "label": "benign"})
    doc["transitions"][0]["outcomes"] = [{"p": 0.5, "next": 1, "done": True},
                                         {"p": 0.3, "next": 2, "done": True}]
    with pytest.raises(GraphValidationError, match="probabilities sum ≠ 1"):
        load_graph(doc_bytes(doc))


@pytest.mark.parametrize("mutate, kind", [
    (lambda d: d.update(extra=1), GraphParseError),
    (lambda d: d["transitions"][0]["outcomes"][0].update(weight=1), GraphParseError),
    (lambda d: d.update(initial_state=5), GraphValidationError),
    (lambda d: d["terminals"][0].update(label="suspicious"), GraphValidationError),
    (lambda d: d["transitions"][0]["outcomes"][0].update(done=False), GraphValidationError),
    (lambda d: d["transitions"][0]["outcomes"][0].update(next=9), GraphValidationError),
    (lambda d: d["transitions"][0].update(action=1), GraphValidationError),
    (lambda d: d["transitions"].append(dict(d["transitions"][0])), GraphValidationError),
    (lambda d: d["transitions"].append({"state": 1, "action": 0, "outcomes": [
        {"p": 1.0, "next": 1, "done": True}]}), GraphValidationError),
    (lambda d: d.update(transitions=[]), GraphValidationError),
])
def test_invalid_documents_rejected(mutate, kind):
    doc = json.loads(json.dumps(MINIMAL_DOC))
    mutate(doc)
    with pytest.raises(kind):
        load_graph(doc_bytes(doc))


def test_encoding_rules():
    with pytest.raises(GraphParseError, match="byte-order mark"):
        load_graph(b"\xef\xbb\xbf" + doc_bytes(MINIMAL_DOC))
    with pytest.raises(GraphParseError):
        load_graph(b"\xff\xfe{")
    with pytest.raises(GraphParseError):
        load_graph(b"{not json")


def test_validation_error_names_the_pair():
    with pytest.raises(GraphValidationError, match="state 0, action 0"):
        WorkflowGraph(2, 1, 0, {1: "benign"}, {(0, 0): (Outcome(1.0, 1, False),)})


@settings(max_examples=200)
@given(graphs())
def test_round_trip_identity(g):
    assert load_graph(dump_graph(g)) == g
    assert graph_from_dict(graph_to_dict(g)) == g
    assert dump_graph(load_graph(dump_graph(g))) == dump_graph(g)


@given(graphs())
def test_stats_sum(g):
    st = graph_stats(g)
    assert st.defined_pair_count == sum(st.per_state_action_counts.values()) == len(g.transitions)


# -- default graph -----------------------------------------------------------

def test_default_graph_shape(graph67):
    st = graph_stats(graph67)
    assert (graph67.state_count, graph67.action_space_size) == (67, 10)
    assert st.defined_pair_count == DEFAULT_PAIR_COUNT == 109
    for s, k in st.per_state_action_counts.items():
        assert (k == 0) if graph67.is_terminal(s) else (1 <= k <= 10)
    assert set(graph67.terminals.values()) == {"malware", "benign"}


def test_committed_file_is_generator_output(graph67):
    assert graph67 == generate_default_graph(0)
    assert dump_graph(generate_default_graph(0)) == dump_graph(generate_default_graph(0))


def test_other_seeds_differ_but_keep_shape():
    g = generate_default_graph(1)
    assert g != generate_default_graph(0)
    assert graph_stats(g).defined_pair_count == 109


def test_default_graph_reachable_and_absorbing(graph67):
    assert graph67.reachable() == set(range(67))
    assert all(not graph67.actions(t) for t in graph67.terminals)


def test_default_graph_is_layered_dag(graph67):
    order = [name for name, _ in PHASES]
    assert [name for name, _ in phase_layers()] == order
    for (s, _), outs in graph67.transitions.items():
        for o in outs:
            here, there = order.index(phase_of(s)), order.index(phase_of(o.next_state))
            # forward one phase, or a re-examine move to a higher id in the same phase
            assert there == here + 1 or (there == here and o.next_state > s)
    assert all(phase_of(t) == "classification" for t in graph67.terminals)


@pytest.mark.parametrize("kind", list(EnvKind))
def test_default_graph_optimum_is_unique(graph67, kind):
    variant = EnvVariant.default(kind)
    values, ideal = value_iteration(graph67, variant)
    for s in range(67):
        if graph67.is_terminal(s):
            continue
        qs = sorted((sum(o.probability * (variant.reward(o) + 0.9 * values[o.next_state])
                         for o in graph67.outcomes(s, a)) for a in graph67.actions(s)),
                    reverse=True)
        assert len(qs) == 1 or qs[0] - qs[1] > 1e-3


@pytest.mark.parametrize("seed", range(60))
def test_random_deterministic_graphs_have_unique_optimum(seed):
    g = random_deterministic_graph(seed)
    assert 3 <= g.state_count <= 10 and 2 <= g.action_space_size <= 4
    live = {s for s in range(g.state_count) if not g.is_terminal(s)}
    assert live <= g.reachable()
    assert all(len(o) == 1 and o[0].probability == 1.0 for o in g.transitions.values())
    for kind in EnvKind:
        v = EnvVariant.default(kind)
        values, _ = value_iteration(g, v)
        for s in live:
            qs = sorted((v.reward(o) + 0.9 * values[o.next_state]
                         for a in g.actions(s) for o in g.outcomes(s, a)), reverse=True)
            assert len(qs) == 1 or qs[0] - qs[1] > 1e-6
