import math

import pytest
from hypothesis import given, settings, strategies as st

from helpers import FIXTURES, COOLING_ALPHABET, load, load_all, random_class
from smlcheck.kripke import (
    GraphTooLarge,
    Layout,
    UnknownAlphabet,
    build,
    default_multiplicities,
    find_loops,
    infer_alphabet,
)
from smlcheck.parser import parse, parse_file
from smlcheck.semantics import LivelockError, new_instance, run_when_phase

FW = {"FwCHILDREN": COOLING_ALPHABET}


def test_cooling_multiplicity(cooling):
    assert default_multiplicities(cooling, FW) == {"FwCHILDREN": 3}


def test_no_children():
    assert default_multiplicities(parse("class: X\n state: S"), {}) == {}


def test_chamber_multiplicities(chamber):
    registry = {c.name: c for c in parse_file(FIXTURES / "rpc_devices.sml")}
    m = default_multiplicities(chamber, registry)
    assert m["RPC_HV"] == len(registry["RPC_HV"].state_names) == 5


def test_unknown_alphabet(chamber):
    with pytest.raises(UnknownAlphabet):
        default_multiplicities(chamber, {})


def test_infer_alphabet(chamber):
    alph = infer_alphabet(chamber, "RPC_HV")
    assert {"RAMPING_UP", "RAMPING_DOWN", "STANDBY", "ON", "ERROR"} <= set(alph)


def test_cooling_graph_size(cooling):
    layout = Layout.build(cooling, FW, {"FwCHILDREN": 2})
    g = build(cooling, layout)
    assert len(g.states) == 3 * 9


def test_childless_single_state():
    cls = parse("class: X\n state: S")
    g = build(cls, Layout.build(cls, {}))
    assert len(g.states) == 1 and g.edges == set()


def test_cooling_edge(cooling):
    layout = Layout.build(cooling, FW, {"FwCHILDREN": 2})
    g = build(cooling, layout)
    kids = (("FwCHILDREN", "NO_CONNECTION"), ("FwCHILDREN", "ERROR"))
    assert g.succ[("ERROR", kids)] == ("NO_CONNECTION", kids)


def test_cooling_loop(cooling):
    layout = Layout.build(cooling, FW, {"FwCHILDREN": 2})
    loops = find_loops(build(cooling, layout))
    assert loops
    for cyc in loops:
        assert len(cyc) == 2 and {s for s, _ in cyc} == {"ERROR", "NO_CONNECTION"}
        assert {st for _, st in cyc[0][1]} == {"ERROR", "NO_CONNECTION"}


def test_acyclic_chain():
    cls = parse("class: X\n state: OFF\n  when ( $ANY$C in_state A ) move_to ON\n state: ON\n")
    assert find_loops(build(cls, Layout.build(cls, {"C": ("A", "B")}))) == []


def test_cap(cooling):
    layout = Layout.build(cooling, FW, {"FwCHILDREN": 2})
    with pytest.raises(GraphTooLarge) as e:
        build(cooling, layout, cap=10)
    assert e.value.size == 27


def test_canonical_size_formula():
    cls = load("endcap_like.sml")
    registry = load_all("endcap_devices.sml")
    layout = Layout.build(cls, registry)
    mult = layout.multiplicities
    alph = dict(layout.slots)
    expected = math.prod(math.comb(len(alph[t]) + n - 1, n) for t, n in mult.items())
    assert layout.size(canonical=True) == expected == sum(1 for _ in layout.configurations(True))


def loop_classes(graph):
    out = set()
    for cyc in find_loops(graph):
        names = [s for s, _ in cyc]
        i = names.index(min(names))
        out.add(tuple(names[i:] + names[:i]))
    return out


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False))
def test_graph_invariants(rng):
    cls, registry = random_class(rng)
    layout = Layout.build(cls, registry)
    g = build(cls, layout)
    for src, dst in g.edges:
        assert src[1] == dst[1]  # children frozen
    assert len(g.succ) == len({s for s, _ in g.edges})  # out-degree <= 1
    # Canonicalisation keeps exactly the loop verdict and loop classes.
    assert loop_classes(build(cls, layout, canonical=True)) == loop_classes(g)


def livelock_somewhere(cls, layout):
    for cfg in layout.configurations(canonical=True):
        for s in cls.state_names:
            try:
                run_when_phase(new_instance(cls, 1, 0, layout.children(cfg), state=s))
            except LivelockError:
                return True
    return False


LEMMA_CASES = [
    ("ecal_cooling_dee.sml", FW),
    ("chamber.sml", "rpc_devices.sml"),
    ("endcap_like.sml", "endcap_devices.sml"),
    ("chamber_standby.sml", "rpc_devices.sml"),
]


@pytest.mark.parametrize("name,reg", LEMMA_CASES)
def test_lemma_on_fixtures(name, reg):
    cls = load(name)
    registry = reg if isinstance(reg, dict) else load_all(reg)
    layout = Layout.build(cls, registry)
    g = build(cls, layout, canonical=True)
    assert bool(find_loops(g)) == livelock_somewhere(cls, layout)


@settings(max_examples=40, deadline=None)
@given(st.randoms(use_true_random=False))
def test_lemma_random(rng):
    cls, registry = random_class(rng)
    layout = Layout.build(cls, registry)
    assert bool(find_loops(build(cls, layout, canonical=True))) == livelock_somewhere(cls, layout)
