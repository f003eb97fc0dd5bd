import itertools
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from esihgnn.errors import DomainError, UsageError
from esihgnn.graph import (RELATION_GROUPS, RELATIONS, Edge, HeteroGraph, NodeRef, RelationType,
                           build_graph, export_graph, parse_graph, parse_relations, position_of,
                           relation_for, validate_dag)

ABA_EXPECTED = {
    ((0, "event"), (1, "event"), "oWant", (0, 1)),
    ((0, "state"), (1, "event"), "oDrive", (0, 1)),
    ((0, "event"), (1, "state"), "oReact", (0, 1)),
    ((0, "state"), (1, "state"), "oDepend", (0, 1)),
    ((0, "event"), (2, "event"), "xWant", (0, 1)),
    ((0, "state"), (2, "event"), "xDrive", (0, 1)),
    ((0, "event"), (2, "state"), "xReact", (0, 1)),
    ((0, "state"), (2, "state"), "xDepend", (0, 1)),
    ((1, "event"), (2, "event"), "oWant", (1, 1)),
    ((1, "state"), (2, "event"), "oDrive", (1, 1)),
    ((1, "event"), (2, "state"), "oReact", (1, 1)),
    ((1, "state"), (2, "state"), "oDepend", (1, 1)),
}

speaker_lists = st.lists(st.sampled_from("ABC"), min_size=1, max_size=8)


def test_relation_triples_are_exhaustive():
    triples = {r.value for r in RELATIONS}
    assert len(RELATIONS) == 8 and len(triples) == 8
    assert triples == set(itertools.product(("event", "state"), ("event", "state"), (True, False)))
    for r in RELATIONS:
        assert oracles.TRIPLES[r.name] == r.value
        assert relation_for(r.source_kind, r.target_kind, r.same_speaker) is r


def test_parse_relations_names_and_groups():
    assert parse_relations("xWant,oDepend") == (RelationType.xWant, RelationType.oDepend)
    assert parse_relations(["event-to-event"]) == RELATION_GROUPS["event-to-event"]
    with pytest.raises(UsageError):
        parse_relations("xWish")


def test_single_turn_has_no_edges():
    g = build_graph(("d", ["A"]), 1)
    assert len(g.nodes) == 2 and g.edges == ()


def test_aba_fixture():
    g = build_graph(("d", ["A", "B", "A"]), 1)
    assert len(g.edges) == 12
    assert oracles.graph_edge_set(g) == ABA_EXPECTED
    assert oracles.enumerate_edges(["A", "B", "A"], 1) == ABA_EXPECTED


def test_two_turns_same_speaker(caplog):
    with caplog.at_level(logging.WARNING):
        g = build_graph(("single-AA", ["A", "A"]), 1)
    assert "single speaker" in caplog.text
    assert sorted(e.relation.name for e in g.edges) == ["xDepend", "xDrive", "xReact", "xWant"]
    assert all(e.src.turn == 0 and e.dst.turn == 1 for e in g.edges)


def test_positions_rank_by_recency():
    speakers = ["A", "B", "A", "B", "A", "B", "A"]
    g = build_graph(("d", speakers), 3)
    got = sorted(e.position for e in g.incoming((6, "event")) if e.relation is RelationType.xWant)
    assert got == [(0, 3), (2, 2), (4, 1)]
    assert position_of(4, NodeRef(6, "event"), RelationType.xWant, g) == (4, 1)
    assert position_of(0, NodeRef(6, "event"), RelationType.xWant, g) == (0, 3)


def test_inter_relation_rank_is_per_speaker():
    g = build_graph(("d", ["B", "C", "A"]), 1)
    into = [e for e in g.incoming((2, "event")) if e.relation is RelationType.oWant]
    assert sorted(e.position for e in into) == [(0, 1), (1, 1)]


def test_window_is_per_speaker():
    # with three speakers and omega=1 a target can hear from three source turns
    g = build_graph(("d", ["A", "B", "C", "A"]), 1)
    assert {e.src.turn for e in g.incoming((3, "state"))} == {0, 1, 2}


def test_omega_must_be_positive():
    with pytest.raises(DomainError):
        build_graph(("d", ["A"]), 0)
    with pytest.raises(DomainError):
        build_graph(("d", []), 1)


@settings(max_examples=200, deadline=None)
@given(speaker_lists, st.integers(1, 3))
def test_matches_enumerator_and_invariants(speakers, omega):
    g = build_graph(("d", speakers), omega)
    assert oracles.graph_edge_set(g) == oracles.enumerate_edges(speakers, omega)
    assert len(g.edge_set()) == len(g.edges)
    assert validate_dag(g)
    assert len(g.edges) <= 8 * omega * len(speakers) * len(set(speakers))
    for e in g.edges:
        assert position_of(e.src.turn, e.dst, e.relation, g) == tuple(e.position)


@settings(max_examples=100, deadline=None)
@given(speaker_lists, st.integers(1, 3), st.data())
def test_prefix_graph_is_induced_subgraph(speakers, omega, data):
    k = data.draw(st.integers(1, len(speakers)))
    full = build_graph(("d", speakers), omega)
    prefix = build_graph(("d", speakers[:k]), omega)
    induced = {e for e in full.edge_set() if e[1].turn < k}
    assert prefix.edge_set() == induced


@settings(max_examples=60, deadline=None)
@given(speaker_lists, st.integers(1, 3), st.sets(st.sampled_from(sorted(oracles.TRIPLES)), min_size=1))
def test_relation_subset_matches_enumerator(speakers, omega, names):
    g = build_graph(("d", speakers), omega, sorted(names))
    assert oracles.graph_edge_set(g) == oracles.enumerate_edges(speakers, omega, names)


def test_validate_dag_reports_violations():
    speakers = ("A", "B", "A", "B")
    backward = Edge(NodeRef(3, "event"), NodeRef(1, "event"), RelationType.xWant, (3, 1))
    report = validate_dag(HeteroGraph("d", speakers, (backward,)))
    assert not report and "e3->e1" in report.violation and report.edge == backward
    mixed = Edge(NodeRef(0, "event"), NodeRef(1, "event"), RelationType.xWant, (0, 1))
    report = validate_dag(HeteroGraph("d", speakers, (mixed,)))
    assert not report and "xWant" in report.violation


def test_json_export_roundtrip():
    g = build_graph(("d", ["A", "B", "A"]), 1)
    text = export_graph(g, "json")
    doc = json.loads(text)
    assert set(doc) >= {"dialogue_id", "nodes", "edges"}
    assert len(doc["edges"]) == 12 and len(doc["nodes"]) == 6
    assert doc["edges"][0].keys() == {"src", "dst", "relation", "position"}
    assert parse_graph(text) == g
    assert export_graph(g, "json") == text
    one = json.loads(export_graph(build_graph(("x", ["A"]), 1)))
    assert len(one["nodes"]) == 2 and one["edges"] == []


def test_dot_export():
    dot = export_graph(build_graph(("d", ["A", "B"]), 1), "dot")
    assert dot.startswith('digraph "d"')
    assert 'e0 [label="e0"' in dot and 's1 [label="s1"' in dot
    assert 'e0 -> e1 [label="oWant"]' in dot
    with pytest.raises(UsageError):
        export_graph(build_graph(("d", ["A"]), 1), "png")


def test_random_fixture_batch(rng):
    for _ in range(50):
        speakers = oracles.random_speakers(rng)
        omega = int(rng.integers(1, 4))
        assert oracles.graph_edge_set(build_graph(("d", speakers), omega)) == \
            oracles.enumerate_edges(speakers, omega)
