"""AST for SML classes.

Nodes are frozen dataclasses. Source positions are carried on every node but
excluded from equality, so two parses of equivalent text compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

FWCHILDREN = "FwCHILDREN"


@dataclass(frozen=True)
class Pos:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NOPOS = Pos()


def _pos() -> Pos:
    return field(default=NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class ChildPattern:
    quantifier: str  # "ANY" | "ALL"
    selector: str  # class name or FWCHILDREN
    pos: Pos = _pos()

    def matches(self, ptype: str) -> bool:
        return self.selector == FWCHILDREN or self.selector == ptype

    def __str__(self) -> str:
        return f"${self.quantifier}${self.selector}"


@dataclass(frozen=True)
class Atom:
    pattern: ChildPattern
    states: frozenset[str]
    # Source order of the state set, kept for printing.
    order: tuple[str, ...] = field(default=(), compare=False, repr=False)
    pos: Pos = _pos()


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"
    pos: Pos = _pos()


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"
    pos: Pos = _pos()


Guard = Union[Atom, And, Or]


def atoms(guard: Guard) -> Iterator[Atom]:
    if isinstance(guard, Atom):
        yield guard
    else:
        yield from atoms(guard.left)
        yield from atoms(guard.right)


@dataclass(frozen=True)
class MoveTo:
    """``move_to S``; used both as a when-clause referer and as a statement."""

    state: str
    pos: Pos = _pos()


@dataclass(frozen=True)
class DoAction:
    """``do A`` referer of a when clause."""

    action: str
    pos: Pos = _pos()


Referer = Union[MoveTo, DoAction]


@dataclass(frozen=True)
class Do:
    command: str
    pattern: ChildPattern
    pos: Pos = _pos()


@dataclass(frozen=True)
class If:
    guard: Guard
    then: tuple["Statement", ...]
    orelse: tuple["Statement", ...] = ()
    pos: Pos = _pos()


Statement = Union[Do, MoveTo, If]


@dataclass(frozen=True)
class WhenClause:
    guard: Guard
    referer: Referer
    pos: Pos = _pos()


@dataclass(frozen=True)
class ActionClause:
    name: str
    body: tuple[Statement, ...]
    pos: Pos = _pos()


@dataclass(frozen=True)
class StateClause:
    name: str
    whens: tuple[WhenClause, ...] = ()
    actions: tuple[ActionClause, ...] = ()
    pos: Pos = _pos()

    def action(self, name: str) -> ActionClause | None:
        for a in self.actions:
            if a.name == name:
                return a
        return None


@dataclass(frozen=True)
class ClassDef:
    name: str
    states: tuple[StateClause, ...]
    pos: Pos = _pos()

    def __hash__(self) -> int:
        # ASTs are shared across many lookups; identity hashing keeps dict keys cheap.
        return id(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassDef):
            return NotImplemented
        return self is other or (self.name, self.states) == (other.name, other.states)

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.states)

    def state(self, name: str) -> StateClause | None:
        for s in self.states:
            if s.name == name:
                return s
        return None

    @property
    def initial_state(self) -> str:
        return self.states[0].name

    def patterns(self) -> Iterator[ChildPattern]:
        """Every child pattern in the class, in source order."""
        for st in self.states:
            for w in st.whens:
                for a in atoms(w.guard):
                    yield a.pattern
            for act in st.actions:
                yield from _stmt_patterns(act.body)

    @property
    def child_classes(self) -> frozenset[str]:
        return frozenset(p.selector for p in self.patterns() if p.selector != FWCHILDREN)

    @property
    def uses_do_referers(self) -> bool:
        return any(isinstance(w.referer, DoAction) for st in self.states for w in st.whens)


def _stmt_patterns(body: tuple[Statement, ...]) -> Iterator[ChildPattern]:
    for stmt in body:
        if isinstance(stmt, Do):
            yield stmt.pattern
        elif isinstance(stmt, If):
            for a in atoms(stmt.guard):
                yield a.pattern
            yield from _stmt_patterns(stmt.then)
            yield from _stmt_patterns(stmt.orelse)


def walk_statements(body: tuple[Statement, ...]) -> Iterator[Statement]:
    """Depth-first, source-ordered traversal of a statement list."""
    for stmt in body:
        yield stmt
        if isinstance(stmt, If):
            yield from walk_statements(stmt.then)
            yield from walk_statements(stmt.orelse)
