"""Static checks, alphabets and pretty printing for parsed SML classes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .syntax import (
    FWCHILDREN,
    And,
    Atom,
    ClassDef,
    Do,
    DoAction,
    Guard,
    If,
    MoveTo,
    Pos,
    Statement,
    atoms,
    walk_statements,
)


@dataclass(frozen=True)
class Diagnostic:
    pos: Pos
    message: str
    severity: str = "warning"
    filename: str | None = None

    def __str__(self) -> str:
        where = f"{self.filename}:" if self.filename else ""
        return f"{where}{self.pos.line}:{self.pos.col}: {self.severity}: {self.message}"


class Alphabet(NamedTuple):
    states: frozenset[str]
    commands: frozenset[str]
    child_classes: frozenset[str]


def alphabet(cls: ClassDef) -> Alphabet:
    states = set(cls.state_names)
    commands = set()
    for st in cls.states:
        for w in st.whens:
            if isinstance(w.referer, MoveTo):
                states.add(w.referer.state)
        for act in st.actions:
            commands.add(act.name)
            for stmt in walk_statements(act.body):
                if isinstance(stmt, MoveTo):
                    states.add(stmt.state)
                elif isinstance(stmt, Do):
                    commands.add(stmt.command)
    return Alphabet(frozenset(states), frozenset(commands), cls.child_classes)


def ordered_states(cls: ClassDef) -> list[str]:
    """The state alphabet in a stable order: declared states first, then move_to targets."""
    out = list(cls.state_names)
    seen = set(out)

    def add(s: str) -> None:
        if s not in seen:
            seen.add(s)
            out.append(s)

    for st in cls.states:
        for w in st.whens:
            if isinstance(w.referer, MoveTo):
                add(w.referer.state)
        for act in st.actions:
            for stmt in walk_statements(act.body):
                if isinstance(stmt, MoveTo):
                    add(stmt.state)
    return out


def validate(
    cls: ClassDef, known_classes: Iterable[str] | None = None, filename: str | None = None
) -> list[Diagnostic]:
    """Warnings for dangling references.

    ``known_classes=None`` skips the child-class check (the set of classes in
    the surrounding system is unknown).
    """
    declared = set(cls.state_names)
    missing_reported: set[str] = set()
    all_actions = {a.name for st in cls.states for a in st.actions}
    known = None if known_classes is None else set(known_classes) | {FWCHILDREN}
    diags = []

    def warn(pos: Pos, msg: str) -> None:
        diags.append(Diagnostic(pos, msg, filename=filename))

    def missing_target(pos: Pos, state: str) -> None:
        # One warning per undeclared target, at its first use.
        if state not in declared and state not in missing_reported:
            missing_reported.add(state)
            warn(pos, f"move_to target {state!r} is not a declared state")

    def check_guard(g: Guard) -> None:
        if known is None:
            return
        for a in atoms(g):
            if a.pattern.selector not in known:
                warn(a.pattern.pos, f"unknown child class {a.pattern.selector!r}")

    for st in cls.states:
        for w in st.whens:
            check_guard(w.guard)
            ref = w.referer
            if isinstance(ref, MoveTo):
                missing_target(ref.pos, ref.state)
            elif isinstance(ref, DoAction) and ref.action not in all_actions:
                warn(ref.pos, f"do referer names action {ref.action!r}, which no state defines")
        for act in st.actions:
            for stmt in walk_statements(act.body):
                if isinstance(stmt, MoveTo):
                    missing_target(stmt.pos, stmt.state)
                elif isinstance(stmt, Do) and known is not None and stmt.pattern.selector not in known:
                    warn(stmt.pattern.pos, f"unknown child class {stmt.pattern.selector!r}")
                elif isinstance(stmt, If):
                    check_guard(stmt.guard)
    return diags


# -- pretty printing ---------------------------------------------------------


def format_guard(g: Guard, top: bool = True) -> str:
    if isinstance(g, Atom):
        names = g.order or tuple(sorted(g.states))
        rhs = names[0] if len(names) == 1 else "{" + ",".join(names) + "}"
        return f"( {g.pattern} in_state {rhs} )"
    op = "and" if isinstance(g, And) else "or"
    return f"( {format_guard(g.left, False)} {op} {format_guard(g.right, False)} )"


def _format_body(body: tuple[Statement, ...], indent: str, lines: list[str]) -> None:
    for stmt in body:
        if isinstance(stmt, Do):
            lines.append(f"{indent}do {stmt.command} {stmt.pattern}")
        elif isinstance(stmt, MoveTo):
            lines.append(f"{indent}move_to {stmt.state}")
        else:
            lines.append(f"{indent}if {format_guard(stmt.guard)} then")
            _format_body(stmt.then, indent + "    ", lines)
            if stmt.orelse:
                lines.append(f"{indent}else")
                _format_body(stmt.orelse, indent + "    ", lines)
            lines.append(f"{indent}endif")


def pretty_print(cls: ClassDef) -> str:
    lines = [f"class: {cls.name}"]
    for st in cls.states:
        lines.append(f"    state: {st.name}")
        for w in st.whens:
            ref = w.referer
            tail = f"move_to {ref.state}" if isinstance(ref, MoveTo) else f"do {ref.action}"
            lines.append(f"        when {format_guard(w.guard)} {tail}")
        for act in st.actions:
            lines.append(f"        action: {act.name}")
            _format_body(act.body, " " * 12, lines)
    return "\n".join(lines) + "\n"
