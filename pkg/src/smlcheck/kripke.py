"""Explicit Kripke structure of a class with a fixed set of children.

A Kripke state pairs a parent state with one state per instantiated child.
There is an edge from ``(s, cfg)`` to ``(s', cfg)`` iff the topmost enabled
when clause of ``s`` under ``cfg`` is ``move_to s'``; children never change
along an edge. Every state is initial, so a move_to loop of the class shows
up as a cycle of this graph. This is the brute-force oracle for the SAT
route in :mod:`smlcheck.loop_sat`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

from .frontend import ordered_states
from .semantics import Child, Fire, topmost
from .syntax import FWCHILDREN, ClassDef, If, MoveTo, atoms, walk_statements

DEFAULT_CAP = 10**7
OTHER_STATE = "__OTHER__"

Registry = Mapping[str, Union[ClassDef, Iterable[str]]]


class UnknownAlphabet(KeyError):
    def __str__(self) -> str:
        return f"no state alphabet known for child class {self.args[0]!r}"


class GraphTooLarge(Exception):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"Kripke structure would have {size} states (cap {cap})")


def _alphabet_of(entry) -> tuple[str, ...]:
    if isinstance(entry, ClassDef):
        return tuple(ordered_states(entry))
    return tuple(dict.fromkeys(entry))


def child_alphabets(cls: ClassDef, registry: Registry) -> dict[str, tuple[str, ...]]:
    """State alphabet of every child class the class refers to.

    A class that only uses ``FwCHILDREN`` gets one anonymous child class named
    ``FwCHILDREN`` whose alphabet must be supplied under that key.
    """
    named = sorted(cls.child_classes)
    uses_fw = any(p.selector == FWCHILDREN for p in cls.patterns())
    wanted = named if named or not uses_fw else [FWCHILDREN]
    out = {}
    for t in wanted:
        if t not in registry:
            raise UnknownAlphabet(t)
        alph = _alphabet_of(registry[t])
        if not alph:
            raise ValueError(f"child class {t!r} has an empty alphabet")
        out[t] = alph
    return out


def default_multiplicities(cls: ClassDef, registry: Registry) -> dict[str, int]:
    """One child per state of each child class: enough to realise every
    combination of ANY/ALL guard outcomes."""
    return {t: len(a) for t, a in child_alphabets(cls, registry).items()}


def infer_alphabet(cls: ClassDef, child_class: str) -> tuple[str, ...]:
    """Fallback alphabet for a child class with no definition at hand: every
    state the class's guards test it against, plus one fresh state standing
    for all the others."""
    seen: dict[str, None] = {}
    guards = [w.guard for st in cls.states for w in st.whens]
    guards += [
        s.guard
        for st in cls.states
        for act in st.actions
        for s in walk_statements(act.body)
        if isinstance(s, If)
    ]
    for g in guards:
        for a in atoms(g):
            if a.pattern.selector in (child_class, FWCHILDREN):
                for st in a.order or sorted(a.states):
                    seen.setdefault(st, None)
    return (*seen, OTHER_STATE)


@dataclass(frozen=True)
class Layout:
    """Instantiated children: slot ``i`` (0-based) is child id ``i + 1``."""

    slots: tuple[tuple[str, tuple[str, ...]], ...]

    @classmethod
    def build(
        cls_, cls: ClassDef, registry: Registry, multiplicities: Mapping[str, int] | None = None
    ) -> "Layout":
        alphabets = child_alphabets(cls, registry)
        mult = default_multiplicities(cls, registry)
        if multiplicities:
            for t, n in multiplicities.items():
                if t not in alphabets:
                    raise ValueError(f"{cls.name} has no child class {t!r}")
                if n < 1:
                    raise ValueError(f"multiplicity of {t!r} must be positive")
                mult[t] = n
        slots = []
        for t in sorted(alphabets):
            slots.extend([(t, alphabets[t])] * mult[t])
        return cls_(tuple(slots))

    @property
    def multiplicities(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for t, _ in self.slots:
            out[t] = out.get(t, 0) + 1
        return out

    def children(self, states: Iterable[str]) -> tuple[Child, ...]:
        return tuple(Child(i + 1, s, t) for i, ((t, _), s) in enumerate(zip(self.slots, states)))

    def size(self, canonical: bool = False) -> int:
        if not canonical:
            return math.prod(len(a) for _, a in self.slots)
        mult = self.multiplicities
        alph = dict(self.slots)
        return math.prod(math.comb(len(alph[t]) + n - 1, n) for t, n in mult.items())

    def configurations(self, canonical: bool = False) -> Iterator[tuple[str, ...]]:
        """All child state vectors. ``canonical`` keeps one representative per
        multiset of states within each child class (children of one class are
        interchangeable under ANY/ALL guards)."""
        if not canonical:
            yield from itertools.product(*(a for _, a in self.slots))
            return
        groups: list[list] = []
        for t, alph in self.slots:
            if groups and groups[-1][0] == t:
                groups[-1][2] += 1
            else:
                groups.append([t, alph, 1])
        per_group = [list(itertools.combinations_with_replacement(a, n)) for _, a, n in groups]
        for combo in itertools.product(*per_group):
            yield tuple(itertools.chain.from_iterable(combo))


KripkeState = tuple[str, tuple[tuple[str, str], ...]]


@dataclass
class KripkeGraph:
    states: list[KripkeState]
    # Out-degree is at most one, so the edge set is a partial successor map.
    succ: dict[KripkeState, KripkeState]

    @property
    def edges(self) -> set[tuple[KripkeState, KripkeState]]:
        return set(self.succ.items())


def build(
    cls: ClassDef,
    layout: Layout,
    canonical: bool = False,
    cap: int = DEFAULT_CAP,
) -> KripkeGraph:
    parent_states = ordered_states(cls)
    size = len(parent_states) * layout.size(canonical)
    if size > cap:
        raise GraphTooLarge(size, cap)
    states: list[KripkeState] = []
    succ: dict[KripkeState, KripkeState] = {}
    for cfg in layout.configurations(canonical):
        chs = layout.children(cfg)
        tagged = tuple((t, s) for (t, _), s in zip(layout.slots, cfg))
        for s in parent_states:
            ks = (s, tagged)
            states.append(ks)
            r = topmost(cls, s, chs)
            if isinstance(r, Fire) and isinstance(r.referer, MoveTo):
                succ[ks] = (r.referer.state, tagged)
    return KripkeGraph(states, succ)


def find_loops(graph: KripkeGraph) -> list[list[KripkeState]]:
    """One witness cycle per cyclic component (cycles are disjoint because the
    out-degree is at most one)."""
    color: dict[KripkeState, int] = {}  # 1 = on current path, 2 = finished
    cycles = []
    for start in graph.states:
        if start in color:
            continue
        path = []
        v = start
        while v is not None and v not in color:
            color[v] = 1
            path.append(v)
            v = graph.succ.get(v)
        if v is not None and color[v] == 1:
            cycles.append(path[path.index(v):])
        for u in path:
            color[u] = 2
    return cycles
