import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from helpers import COOLING_ALPHABET, load, load_all, random_class
from smlcheck.kripke import Layout
from smlcheck.parser import parse
from smlcheck.reach import (
    DISCLAIMER,
    StateChangeGraph,
    build_state_change_graph,
    check_witness,
    emit_dot,
    scc,
    tarjan,
)

FW = {"FwCHILDREN": COOLING_ALPHABET}


@pytest.fixture(scope="module")
def endcap():
    cls = load("endcap_like.sml")
    return cls, Layout.build(cls, load_all("endcap_devices.sml"))


def graph_of(text, registry):
    cls = parse(text)
    return build_state_change_graph(cls, Layout.build(cls, registry))


def test_endcap_graph(endcap):
    cls, layout = endcap
    g = build_state_change_graph(cls, layout)
    assert len(g.vertices) == 7
    assert g.successors("OFF")
    assert not [e for e in g.edges if e[1] == "OFF" and e[0] != "OFF"]
    for e in g.edges:
        assert check_witness(cls, g, e)


def test_endcap_enum_equals_sat(endcap):
    cls, layout = endcap
    assert set(build_state_change_graph(cls, layout, "enum").edges) == set(
        build_state_change_graph(cls, layout, "sat").edges
    )


def test_endcap_scc(endcap):
    cls, layout = endcap
    report = scc(build_state_change_graph(cls, layout))
    assert len(report.components) == 2
    off = report.components[report.component_of("OFF")]
    assert off.states == ["OFF"] and off.source and not off.trap
    assert [c for c in report.components if c.source and not c.trap] == [off]
    assert report.violation and report.diagnostics
    assert report.disclaimer == DISCLAIMER


def test_no_whens_edgeless():
    g = graph_of("class: X\n state: A\n state: B\n", {})
    assert g.edges == {}


def test_cooling_edges(cooling):
    g = build_state_change_graph(cooling, Layout.build(cooling, FW))
    assert set(g.edges) == {
        ("ERROR", "NO_CONNECTION"),
        ("ERROR", "OK"),
        ("NO_CONNECTION", "OK"),
        ("NO_CONNECTION", "ERROR"),
    }


def test_mutual_cycle_single_scc():
    g = graph_of(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) move_to B\n"
        " state: B\n  when ( $ANY$C in_state U ) move_to A\n",
        {"C": ("U",)},
    )
    report = scc(g)
    assert len(report.components) == 1 and report.diagnostics == [] and not report.violation


def test_chain():
    g = graph_of(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) move_to B\n"
        " state: B\n  when ( $ANY$C in_state U ) move_to C\n state: C\n",
        {"C": ("U",)},
    )
    report = scc(g)
    kinds = {tuple(c.states): c.kind for c in report.components}
    assert kinds == {("A",): "source", ("B",): "internal", ("C",): "trap"}


def test_dot_endcap(endcap):
    cls, layout = endcap
    g = build_state_change_graph(cls, layout)
    dot = emit_dot(g, scc(g))
    assert dot.count("subgraph cluster_") == 2
    cluster0 = dot.split("subgraph cluster_0 {")[1].split("}")[0]
    assert '"OFF";' in cluster0 and cluster0.count(";") == 3  # label, style, one node


def test_dot_single_node():
    g = graph_of("class: X\n state: A\n", {})
    dot = emit_dot(g, scc(g))
    assert '"A";' in dot and "->" not in dot


def test_dot_cooling(cooling):
    g = build_state_change_graph(cooling, Layout.build(cooling, FW))
    dot = emit_dot(g, scc(g))
    assert '"ERROR" -> "NO_CONNECTION" [dir=both, style=solid];' in dot
    assert '"ERROR" -> "OK" [style=dashed];' in dot
    assert '"NO_CONNECTION" -> "OK" [style=dashed];' in dot
    assert '"NO_CONNECTION" -> "ERROR"' not in dot


def test_tarjan_deep_chain_is_iterative():
    n = 5000
    vs = [str(i) for i in range(n)]
    succ = {vs[i]: [vs[i + 1]] for i in range(n - 1)}
    assert len(tarjan(vs, succ)) == n


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=30))))
def test_tarjan_matches_networkx(problem):
    n, edges = problem
    vs = [f"v{i}" for i in range(n)]
    succ = {v: [] for v in vs}
    for a, b in edges:
        succ[vs[a]].append(vs[b])
    g = nx.DiGraph()
    g.add_nodes_from(vs)
    g.add_edges_from((vs[a], vs[b]) for a, b in edges)
    ours = {frozenset(c) for c in tarjan(vs, succ)}
    assert ours == {frozenset(c) for c in nx.strongly_connected_components(g)}


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_random_enum_vs_sat_and_permutation(rng):
    cls, registry = random_class(rng)
    layout = Layout.build(cls, registry)
    g = build_state_change_graph(cls, layout, "enum")
    g_sat = build_state_change_graph(cls, layout, "sat")
    assert set(g.edges) == set(g_sat.edges)
    for e in g_sat.edges:
        assert check_witness(cls, g_sat, e)
    slots = list(layout.slots)
    random.Random(rng.random()).shuffle(slots)
    g_perm = build_state_change_graph(cls, Layout(tuple(slots)), "enum")
    assert [c.states for c in scc(g_perm).components] == [c.states for c in scc(g).components]
    nxg = nx.DiGraph(list(g.edges))
    nxg.add_nodes_from(g.vertices)
    assert {frozenset(c.states) for c in scc(g).components} == {
        frozenset(c) for c in nx.strongly_connected_components(nxg)
    }
