"""Bounded model checking of when-phase move_to loops.

Variables ``in_state(s, p, i)`` say that process ``p`` (0 is the class under
analysis, 1.. its children) is in state ``s`` after ``i`` steps. The formula
is the conjunction of

* state constraints: exactly one state per process and step, children frozen;
* the transition relation: each step fires the topmost enabled when clause of
  the current parent state, which must be a ``move_to``;
* the loop condition: the parent returns to its step-0 state at some step
  ``1 <= i <= k``.

Guards are compiled over the children's step-0 variables with Tseitin
auxiliaries. With ``k`` equal to the number of parent states, and one child
per state of each child class, every loop of the class is found.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence, TextIO

from .frontend import ordered_states
from .kripke import Layout, Registry
from .sat import Solver, solve_external, write_dimacs
from .semantics import Fire, LivelockError, new_instance, run_when_phase, topmost
from .syntax import And, Atom, ClassDef, Guard, MoveTo

PAIRWISE_LIMIT = 8


class VarKey(NamedTuple):
    s: str
    p: int
    i: int


@dataclass
class CnfFormula:
    clauses: list[list[int]]
    varmap: dict[VarKey, int]
    nvars: int
    meta: dict = field(default_factory=dict)
    # Clause counts per constraint group.
    counts: dict[str, int] = field(default_factory=dict)

    def key_of(self, var: int) -> VarKey | None:
        if not hasattr(self, "_inv"):
            self._inv = {v: k for k, v in self.varmap.items()}
        return self._inv.get(var)

    def to_dimacs(self, out: TextIO) -> None:
        comments = [f"{k}: {v}" for k, v in self.meta.items()]
        comments += [f"var {v} in_state({k.s},{k.p},{k.i})" for k, v in self.varmap.items()]
        write_dimacs(self.nvars, self.clauses, out, comments)


class _Builder:
    def __init__(self):
        self.nvars = 0
        self.clauses: list[list[int]] = []
        self.varmap: dict[VarKey, int] = {}
        self.counts: dict[str, int] = {}
        self.group = "misc"

    def var(self) -> int:
        self.nvars += 1
        return self.nvars

    def in_state(self, s: str, p: int, i: int) -> int:
        key = VarKey(s, p, i)
        v = self.varmap.get(key)
        if v is None:
            v = self.varmap[key] = self.var()
        return v

    def add(self, clause: list[int]) -> None:
        self.clauses.append(clause)
        self.counts[self.group] = self.counts.get(self.group, 0) + 1

    # Tseitin connectives over literals and the constants True/False.

    def lor(self, lits) -> int | bool:
        out = []
        for lit in lits:
            if lit is True:
                return True
            if lit is not False:
                out.append(lit)
        if not out:
            return False
        if len(out) == 1:
            return out[0]
        v = self.var()
        self.add([-v, *out])
        for lit in out:
            self.add([v, -lit])
        return v

    def land(self, lits) -> int | bool:
        out = []
        for lit in lits:
            if lit is False:
                return False
            if lit is not True:
                out.append(lit)
        if not out:
            return True
        if len(out) == 1:
            return out[0]
        v = self.var()
        self.add([v, *(-lit for lit in out)])
        for lit in out:
            self.add([-v, lit])
        return v

    def exactly_one(self, lits: list[int]) -> None:
        self.add(list(lits))
        if len(lits) < PAIRWISE_LIMIT:
            for a in range(len(lits)):
                for b in range(a + 1, len(lits)):
                    self.add([-lits[a], -lits[b]])
            return
        # Sequential counter: r[j] holds iff one of lits[0..j] is true.
        n = len(lits)
        r = [self.var() for _ in range(n - 1)]
        self.add([-lits[0], r[0]])
        for j in range(1, n - 1):
            self.add([-lits[j], r[j]])
            self.add([-r[j - 1], r[j]])
            self.add([-lits[j], -r[j - 1]])
        self.add([-lits[n - 1], -r[n - 2]])


def _neg(lit: int | bool) -> int | bool:
    return (not lit) if isinstance(lit, bool) else -lit


class _Encoding:
    """Child variables at step 0, guard literals, and clause-firing literals."""

    def __init__(self, cls: ClassDef, layout: Layout, b: _Builder):
        self.cls = cls
        self.layout = layout
        self.b = b
        self._guards: dict[int, int | bool] = {}

    def child_lit(self, slot: int, states) -> int | bool:
        alph = self.layout.slots[slot][1]
        return self.b.lor(self.b.in_state(s, slot + 1, 0) for s in alph if s in states)

    def guard(self, g: Guard) -> int | bool:
        hit = self._guards.get(id(g))
        if hit is not None:
            return hit
        b = self.b
        if isinstance(g, Atom):
            per_child = [
                self.child_lit(i, g.states)
                for i, (t, _) in enumerate(self.layout.slots)
                if g.pattern.matches(t)
            ]
            lit = b.lor(per_child) if g.pattern.quantifier == "ANY" else b.land(per_child)
        elif isinstance(g, And):
            lit = b.land([self.guard(g.left), self.guard(g.right)])
        else:
            lit = b.lor([self.guard(g.left), self.guard(g.right)])
        self._guards[id(g)] = lit
        return lit

    def firing(self, state: str) -> list[tuple[int | bool, object]]:
        """(literal, referer) per when clause of ``state``: the literal holds iff
        that clause is the topmost enabled one."""
        st = self.cls.state(state)
        if st is None:
            return []
        out = []
        earlier: list[int | bool] = []
        for w in st.whens:
            g = self.guard(w.guard)
            out.append((self.b.land([g, *(_neg(e) for e in earlier)]), w.referer))
            earlier.append(g)
        return out


def choose_bound(cls: ClassDef) -> int:
    return len(ordered_states(cls))


def encode(cls: ClassDef, layout: Layout, k: int) -> CnfFormula:
    if k < 1:
        raise ValueError("bound must be at least 1")
    parent = ordered_states(cls)
    b = _Builder()
    # Allocate in_state variables first so their numbering is dense and stable.
    for i in range(k + 1):
        for s in parent:
            b.in_state(s, 0, i)
        for slot, (_, alph) in enumerate(layout.slots):
            for s in alph:
                b.in_state(s, slot + 1, i)

    b.group = "state"
    for i in range(k + 1):
        b.exactly_one([b.in_state(s, 0, i) for s in parent])
        for slot, (_, alph) in enumerate(layout.slots):
            b.exactly_one([b.in_state(s, slot + 1, i) for s in alph])
    b.group = "frozen"
    for i in range(1, k + 1):
        for slot, (_, alph) in enumerate(layout.slots):
            for s in alph:
                x0, xi = b.in_state(s, slot + 1, 0), b.in_state(s, slot + 1, i)
                b.add([-xi, x0])
                b.add([xi, -x0])

    b.group = "guards"
    enc = _Encoding(cls, layout, b)
    moves = {}
    for s in parent:
        moves[s] = [(f, r.state) for f, r in enc.firing(s) if isinstance(r, MoveTo)]

    b.group = "transition"
    for i in range(k):
        for s in parent:
            here = b.in_state(s, 0, i)
            fs = [f for f, _ in moves[s] if f is not False]
            # Every step must fire an enabled move_to clause.
            if not any(f is True for f in fs):
                b.add([-here, *fs])
            for f, target in moves[s]:
                if f is False:
                    continue
                nxt = b.in_state(target, 0, i + 1)
                b.add([-here, nxt] if f is True else [-here, -f, nxt])

    b.group = "loop"
    for s in parent:
        b.add([-b.in_state(s, 0, 0), *(b.in_state(s, 0, i) for i in range(1, k + 1))])

    meta = {"class": cls.name, "k": k, "multiplicities": layout.multiplicities}
    return CnfFormula(b.clauses, b.varmap, b.nvars, meta, dict(b.counts))


# -- solving and decoding --------------------------------------------------------


class LoopWitness(NamedTuple):
    cycle: tuple[str, ...]  # s_0 .. s_l with s_l == s_0
    children: tuple[tuple[str, str], ...]  # (class, state) per child, frozen
    clauses: tuple[int, ...]  # index of the when clause fired at each step
    core: tuple[tuple[str, str], ...]  # a minimal sub-configuration that still loops

    @property
    def length(self) -> int:
        return len(self.cycle) - 1

    @property
    def is_self_loop(self) -> bool:
        return self.length == 1

    @property
    def loop_class(self) -> tuple[str, ...]:
        """The cycle rotated to start at its smallest state name."""
        states = self.cycle[:-1]
        i = states.index(min(states))
        return states[i:] + states[:i]


def solve(f: CnfFormula, external: Sequence[str] | None = None) -> dict[int, bool] | None:
    if external:
        return solve_external(external, f.nvars, f.clauses)
    s = Solver(f.nvars)
    for c in f.clauses:
        if not s.add_clause(c):
            return None
    return s.model() if s.solve() else None


def decode(f: CnfFormula, model: Mapping[int, bool], layout: Layout) -> tuple[list[str], tuple[str, ...]]:
    k = f.meta["k"]
    by_step: dict[tuple[int, int], str] = {}
    for key, v in f.varmap.items():
        if model.get(v) and key.i <= k:
            by_step[key.p, key.i] = key.s
    parent = [by_step[0, i] for i in range(k + 1) if (0, i) in by_step]
    children = tuple(by_step[slot + 1, 0] for slot in range(len(layout.slots)))
    return parent, children


def replay(cls: ClassDef, layout: Layout, start: str, child_states: Sequence[str]) -> list[str] | None:
    """Run the when phase from ``start``; the revisited cycle, or None if it settles."""
    fsm = new_instance(cls, 0, -1, layout.children(child_states), state=start)
    try:
        run_when_phase(fsm)
    except LivelockError as e:
        return e.cycle
    return None


def _witness(cls: ClassDef, layout: Layout, parent: list[str], children: tuple[str, ...]) -> LoopWitness:
    start = parent[0]
    ell = next(i for i in range(1, len(parent)) if parent[i] == start)
    cycle = tuple(parent[: ell + 1])
    replayed = replay(cls, layout, start, children)
    if replayed is None or tuple(replayed) != cycle[:-1]:
        raise AssertionError(
            f"SAT witness for {cls.name} does not replay: expected {cycle}, semantics gave {replayed}"
        )
    chs = layout.children(children)
    fired = []
    for s in cycle[:-1]:
        r = topmost(cls, s, chs)
        assert isinstance(r, Fire)
        fired.append(r.index)
    tagged = tuple((t, s) for (t, _), s in zip(layout.slots, children))
    return LoopWitness(cycle, tagged, tuple(fired), _minimal_core(cls, start, cycle, tagged))


def _minimal_core(cls, start, cycle, tagged):
    core = list(tagged)
    i = 0
    while i < len(core):
        trial = core[:i] + core[i + 1:]
        sub = Layout(tuple((t, (s,)) for t, s in trial))
        got = replay(cls, sub, start, [s for _, s in trial])
        if got is not None and tuple(got) == cycle[:-1]:
            core = trial
        else:
            i += 1
    return tuple(sorted(core))


@dataclass
class LoopReport:
    cls: str
    k: int
    layout: Layout
    witnesses: list[LoopWitness]
    nvars: int
    nclauses: int
    seconds: float
    complete: bool  # False if enumeration stopped at the witness cap

    @property
    def has_loop(self) -> bool:
        return bool(self.witnesses)


def find_move_to_loops(
    cls: ClassDef,
    registry: Registry,
    multiplicities: Mapping[str, int] | None = None,
    k: int | None = None,
    max_witnesses: int = 16,
    external: Sequence[str] | None = None,
) -> LoopReport:
    """Enumerate loop classes: after each witness, block its cycle (every
    rotation) and solve again."""
    t0 = time.perf_counter()
    layout = Layout.build(cls, registry, multiplicities)
    k = choose_bound(cls) if k is None else k
    f = encode(cls, layout, k)
    witnesses: list[LoopWitness] = []
    solver = None if external else Solver(f.nvars)
    ok = True
    if solver is not None:
        for c in f.clauses:
            ok = solver.add_clause(c) and ok
    clauses = list(f.clauses)
    complete = True
    while ok:
        if len(witnesses) >= max_witnesses:
            complete = False
            break
        if solver is not None:
            model = solver.model() if solver.solve() else None
        else:
            model = solve_external(external, f.nvars, clauses)
        if model is None:
            break
        parent, children = decode(f, model, layout)
        w = _witness(cls, layout, parent, children)
        witnesses.append(w)
        states = w.cycle[:-1]
        for r in range(len(states)):
            rot = states[r:] + states[:r]
            block = [-f.varmap[VarKey(s, 0, i)] for i, s in enumerate(rot)]
            if solver is not None:
                ok = solver.add_clause(block)
            clauses.append(block)
    return LoopReport(
        cls.name, k, layout, witnesses, f.nvars, len(f.clauses), time.perf_counter() - t0, complete
    )


def has_loop(cls: ClassDef, layout: Layout, k: int) -> bool:
    return solve(encode(cls, layout, k)) is not None


# -- single-step queries (state-change graph) ------------------------------------


def edge_witness(cls: ClassDef, layout: Layout, source: str, target: str) -> tuple[str, ...] | None:
    """A child configuration under which ``source``'s topmost enabled clause is
    ``move_to target``, or None."""
    b = _Builder()
    for slot, (_, alph) in enumerate(layout.slots):
        for s in alph:
            b.in_state(s, slot + 1, 0)
    b.group = "state"
    for slot, (_, alph) in enumerate(layout.slots):
        b.exactly_one([b.in_state(s, slot + 1, 0) for s in alph])
    enc = _Encoding(cls, layout, b)
    fs = [f for f, r in enc.firing(source) if isinstance(r, MoveTo) and r.state == target]
    if not fs or all(f is False for f in fs):
        return None
    if not any(f is True for f in fs):
        b.add([f for f in fs if f is not False])
    f = CnfFormula(b.clauses, b.varmap, b.nvars, {"k": 0})
    model = solve(f)
    if model is None:
        return None
    return decode(f, model, layout)[1]
