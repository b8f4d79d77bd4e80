import io
import random
import sys
from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from helpers import COOLING_ALPHABET, corpus, load, load_all, random_class
from smlcheck.kripke import Layout, build, find_loops
from smlcheck.loop_sat import (
    PAIRWISE_LIMIT,
    choose_bound,
    edge_witness,
    encode,
    find_move_to_loops,
    has_loop,
    replay,
    solve,
)
from smlcheck.parser import parse
from smlcheck.sat import read_dimacs
from test_sat import FAKE_SOLVER

FW = {"FwCHILDREN": COOLING_ALPHABET}


def test_bound_cooling(cooling):
    assert choose_bound(cooling) == 3


def test_bound_single_state():
    assert choose_bound(parse("class: X\n state: S")) == 1


def test_bound_endcap():
    assert choose_bound(load("endcap_like.sml")) == 7


def test_cooling_sat(cooling):
    layout = Layout.build(cooling, FW)
    assert solve(encode(cooling, layout, 3)) is not None
    report = find_move_to_loops(cooling, FW)
    assert report.k == 3 and report.layout.multiplicities == {"FwCHILDREN": 3}
    assert [w.loop_class for w in report.witnesses] == [("ERROR", "NO_CONNECTION")]
    w = report.witnesses[0]
    assert w.length == 2 and not w.is_self_loop
    assert {s for _, s in w.children} >= {"ERROR", "NO_CONNECTION"}
    assert sorted(s for _, s in w.core) == ["ERROR", "NO_CONNECTION"]


def test_dag_unsat():
    cls = parse(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) move_to B\n"
        " state: B\n  when ( $ALL$C in_state V ) move_to C\n state: C\n"
    )
    registry = {"C": ("U", "V")}
    assert not has_loop(cls, Layout.build(cls, registry), 3)
    assert not find_move_to_loops(cls, registry).has_loop


def test_always_swap():
    cls = parse(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) move_to B\n  when ( $ALL$C in_state V ) move_to B\n"
        " state: B\n  when ( $ANY$C in_state U ) move_to A\n  when ( $ALL$C in_state V ) move_to A\n"
    )
    report = find_move_to_loops(cls, {"C": ("U", "V")})
    assert [w.loop_class for w in report.witnesses] == [("A", "B")]
    assert report.witnesses[0].length == 2


def test_self_loop_flagged():
    cls = parse("class: X\n state: A\n  when ( $ANY$C in_state U ) move_to A\n")
    report = find_move_to_loops(cls, {"C": ("U", "V")})
    assert report.has_loop and report.witnesses[0].is_self_loop


def test_chamber_no_loop(chamber):
    registry = load_all("rpc_devices.sml")
    assert not find_move_to_loops(chamber, registry).has_loop
    assert find_loops(build(chamber, Layout.build(chamber, registry), canonical=True)) == []


@pytest.mark.parametrize("name,reg", [("ecal_cooling_dee.sml", FW), ("endcap_like.sml", "endcap_devices.sml")])
def test_encoding_size(name, reg):
    cls = load(name)
    registry = reg if isinstance(reg, dict) else load_all(reg)
    layout = Layout.build(cls, registry)
    k = choose_bound(cls)
    f = encode(cls, layout, k)
    sizes = [k] + [len(a) for _, a in layout.slots]
    # in_state variables: sum over processes of |S_p| (k+1), numbered 1..N.
    n_in_state = sum(sizes) * (k + 1)
    assert len(f.varmap) == n_in_state
    assert sorted(f.varmap.values()) == list(range(1, n_in_state + 1))

    def eo(n):
        return 1 + (comb(n, 2) if n < PAIRWISE_LIMIT else 3 * n - 3)

    assert f.counts["state"] == (k + 1) * sum(eo(n) for n in sizes)
    assert f.counts["frozen"] == 2 * k * sum(sizes[1:])
    assert f.counts["loop"] == sizes[0]
    assert sum(f.counts.values()) == len(f.clauses)


def test_sequential_counter_used_for_large_domains():
    states = [f"S{i}" for i in range(9)]
    text = "class: X\n" + "".join(f" state: {s}\n" for s in states)
    text += "  when ( $ANY$C in_state U ) move_to S8\n"
    cls = parse(text)
    f = encode(cls, Layout.build(cls, {"C": ("U",)}), 9)
    assert f.nvars > len(f.varmap)
    assert find_move_to_loops(cls, {"C": ("U",)}).witnesses[0].is_self_loop


def test_dimacs_export(cooling):
    f = encode(cooling, Layout.build(cooling, FW), 3)
    buf = io.StringIO()
    f.to_dimacs(buf)
    nvars, clauses = read_dimacs(buf.getvalue())
    assert nvars == f.nvars and clauses == f.clauses
    assert "in_state(ERROR,0,0)" in buf.getvalue()


def test_external_solver_path(cooling, tmp_path):
    script = tmp_path / "solver.py"
    script.write_text(FAKE_SOLVER)
    report = find_move_to_loops(cooling, FW, external=[sys.executable, str(script)])
    assert [w.loop_class for w in report.witnesses] == [("ERROR", "NO_CONNECTION")]


def test_witness_cap():
    # Two disjoint loop classes: {A,B} and {C}.
    cls = parse(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) move_to B\n"
        " state: B\n  when ( $ANY$C in_state U ) move_to A\n"
        " state: C\n  when ( $ANY$C in_state V ) move_to C\n"
    )
    full = find_move_to_loops(cls, {"C": ("U", "V")})
    assert sorted(w.loop_class for w in full.witnesses) == [("A", "B"), ("C",)]
    assert full.complete
    capped = find_move_to_loops(cls, {"C": ("U", "V")}, max_witnesses=1)
    assert len(capped.witnesses) == 1 and not capped.complete


def test_do_referer_blocks_step():
    cls = parse(
        "class: X\n state: A\n  when ( $ANY$C in_state U ) do GO\n  when ( $ANY$C in_state U ) move_to A\n"
        "  action: GO\n   move_to A\n"
    )
    assert not find_move_to_loops(cls, {"C": ("U", "V")}).has_loop


def test_edge_witness(cooling):
    layout = Layout.build(cooling, FW)
    w = edge_witness(cooling, layout, "ERROR", "NO_CONNECTION")
    assert w is not None and "NO_CONNECTION" in w
    assert edge_witness(cooling, layout, "OK", "ERROR") is None


def kripke_classes(cls, layout):
    out = set()
    for cyc in find_loops(build(cls, layout, canonical=True)):
        names = [s for s, _ in cyc]
        i = names.index(min(names))
        out.add(tuple(names[i:] + names[:i]))
    return out


@pytest.mark.parametrize("cls,registry", corpus(50, seed=7), ids=lambda x: getattr(x, "name", ""))
def test_random_vs_kripke(cls, registry):
    report = find_move_to_loops(cls, registry, max_witnesses=64)
    oracle = kripke_classes(cls, report.layout)
    assert report.has_loop == bool(oracle)
    assert {w.loop_class for w in report.witnesses} <= oracle
    for w in report.witnesses:
        assert tuple(replay(cls, report.layout, w.cycle[0], [s for _, s in w.children])) == w.cycle[:-1]


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_permutation_invariance(rng):
    cls, registry = random_class(rng)
    layout = Layout.build(cls, registry)
    k = choose_bound(cls)
    slots = list(layout.slots)
    random.Random(rng.random()).shuffle(slots)
    assert has_loop(cls, layout, k) == has_loop(cls, Layout(tuple(slots)), k)


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_bound_doubling(rng):
    cls, registry = random_class(rng)
    layout = Layout.build(cls, registry)
    n = choose_bound(cls)
    assert has_loop(cls, layout, n) == has_loop(cls, layout, 2 * n)
