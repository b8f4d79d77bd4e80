"""Operational semantics of a single FSM instance.

An :class:`FsmInstance` is an immutable value; every step function returns a
new instance together with the events the step emitted. Action clauses run
over integer statement labels: 0 is the clause selector (waiting for a
command), -1 marks the end of an action (queue must be emptied before the
when phase resumes), and statements are numbered 1, 2, ... per state in
depth-first source order.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

from .syntax import (
    And,
    Atom,
    ClassDef,
    Do,
    DoAction,
    Guard,
    If,
    MoveTo,
    Referer,
    Statement,
    atoms,
)

CLAUSE_SELECTOR = 0
END_OF_ACTION = -1


class Phase(enum.Enum):
    WHEN = "WhenPhase"
    ACTION = "ActionPhase"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Child:
    id: int
    state: str
    ptype: str
    busy: bool = False


@dataclass(frozen=True)
class ActPhaseState:
    cq: tuple[tuple[int, str], ...] = ()
    pc: int = CLAUSE_SELECTOR


# -- events --------------------------------------------------------------------


@dataclass(frozen=True)
class MoveState:
    id: int
    state: str


@dataclass(frozen=True)
class SendState:
    id: int
    parent: int
    state: str


@dataclass(frozen=True)
class MovePhase:
    id: int
    phase: Phase


@dataclass(frozen=True)
class CommCommand:
    parent: int
    child: int
    command: str


@dataclass(frozen=True)
class CommState:
    child: int
    parent: int
    state: str


@dataclass(frozen=True)
class IgnoredCommand:
    id: int
    command: str


Event = Union[MoveState, SendState, MovePhase, CommCommand, CommState, IgnoredCommand]


def event_to_json(ev: Event) -> dict:
    d = {"event": type(ev).__name__}
    for k, v in ev.__dict__.items():
        d[k] = str(v) if isinstance(v, Phase) else v
    return d


# -- statement labels ------------------------------------------------------------


@dataclass(frozen=True)
class Labeled:
    label: int
    stmt: Statement
    next: int
    # For If statements: where each branch starts (next if the branch is empty).
    then_label: int = 0
    else_label: int = 0


@dataclass(frozen=True)
class StateProgram:
    entries: dict[int, Labeled]
    action_entry: dict[str, int]  # action name -> label of its first statement


_programs: dict[int, tuple[ClassDef, dict[str, StateProgram]]] = {}


def program(cls: ClassDef) -> dict[str, StateProgram]:
    """Label table for every state of ``cls`` (cached per class object)."""
    hit = _programs.get(id(cls))
    if hit is not None and hit[0] is cls:
        return hit[1]
    out = {}
    for st in cls.states:
        counter = itertools.count(1)
        entries: dict[int, Labeled] = {}
        entry = {}
        for act in st.actions:
            entry[act.name] = _link(_assign(act.body, counter), END_OF_ACTION, entries)
        out[st.name] = StateProgram(entries, entry)
    _programs[id(cls)] = (cls, out)
    return out


def _assign(body, counter) -> list:
    nodes = []
    for stmt in body:
        label = next(counter)
        if isinstance(stmt, If):
            nodes.append((label, stmt, _assign(stmt.then, counter), _assign(stmt.orelse, counter)))
        else:
            nodes.append((label, stmt, [], []))
    return nodes


def _link(nodes: list, after: int, entries: dict[int, Labeled]) -> int:
    for i, (label, stmt, then_nodes, else_nodes) in enumerate(nodes):
        nxt = nodes[i + 1][0] if i + 1 < len(nodes) else after
        if isinstance(stmt, If):
            entries[label] = Labeled(
                label, stmt, nxt, _link(then_nodes, nxt, entries), _link(else_nodes, nxt, entries)
            )
        else:
            entries[label] = Labeled(label, stmt, nxt)
    return nodes[0][0] if nodes else after


# -- guards and the when phase ------------------------------------------------


def eval_guard(g: Guard, chs: Sequence[Child]) -> bool:
    if isinstance(g, Atom):
        sel = g.pattern.selector
        states = g.states
        matching = (c for c in chs if sel == "FwCHILDREN" or c.ptype == sel)
        if g.pattern.quantifier == "ALL":
            return all(c.state in states for c in matching)
        return any(c.state in states for c in matching)
    if isinstance(g, And):
        return eval_guard(g.left, chs) and eval_guard(g.right, chs)
    return eval_guard(g.left, chs) or eval_guard(g.right, chs)


def referenced_children(g: Guard, chs: Sequence[Child]) -> list[Child]:
    pats = [a.pattern for a in atoms(g)]
    return [c for c in chs if any(p.matches(c.ptype) for p in pats)]


@dataclass(frozen=True)
class Settled:
    pass


@dataclass(frozen=True)
class Fire:
    referer: Referer
    index: int


SETTLED = Settled()


def topmost(cls: ClassDef, state: str, chs: Sequence[Child]) -> Settled | Fire:
    """The topmost enabled when clause of ``state`` (pure in class, state, children)."""
    st = cls.state(state)
    if st is not None:
        for i, w in enumerate(st.whens):
            if eval_guard(w.guard, chs):
                return Fire(w.referer, i)
    return SETTLED


@dataclass(frozen=True)
class FsmInstance:
    self_id: int
    parent: int
    cls: ClassDef = field(repr=False)
    s: str
    chs: tuple[Child, ...] = ()
    phase: Phase = Phase.WHEN
    act: ActPhaseState = ActPhaseState()
    command_received: bool = False

    @property
    def pc(self) -> int:
        return self.act.pc

    @property
    def cq(self) -> tuple[tuple[int, str], ...]:
        return self.act.cq

    def child(self, child_id: int) -> Child:
        for c in self.chs:
            if c.id == child_id:
                return c
        raise KeyError(child_id)

    def key(self) -> tuple:
        """Hashable snapshot of the mutable part of the instance."""
        return (self.s, self.chs, self.phase, self.act, self.command_received)


def new_instance(
    cls: ClassDef,
    self_id: int,
    parent: int,
    children: Iterable[Child] = (),
    state: str | None = None,
) -> FsmInstance:
    """Initial instance: first declared state (unless overridden), when phase,
    children non-busy."""
    chs = tuple(replace(c, busy=False) for c in children)
    ids = [c.id for c in chs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate child ids in {ids}")
    s = cls.initial_state if state is None else state
    return FsmInstance(self_id, parent, cls, s, chs)


def when_step(fsm: FsmInstance) -> Settled | Fire:
    if fsm.phase is not Phase.WHEN:
        raise ValueError("when_step requires the when phase")
    return topmost(fsm.cls, fsm.s, fsm.chs)


class LivelockError(Exception):
    """The when phase revisited a state: the FSM loops on move_to forever."""

    def __init__(self, fsm_id: int, cycle: list[str], events: list[Event]):
        self.fsm_id = fsm_id
        self.cycle = cycle
        self.events = events
        super().__init__(f"FSM {fsm_id} loops in the when phase: {' -> '.join(cycle + cycle[:1])}")


def _enter_action_phase(fsm: FsmInstance) -> FsmInstance:
    return replace(fsm, phase=Phase.ACTION, act=ActPhaseState(), command_received=False)


def run_when_phase(
    fsm: FsmInstance, max_iters: int | None = None, detect_livelock: bool = True
) -> tuple[FsmInstance, list[Event]]:
    """Evaluate when clauses until no guard holds (or a ``do`` referer fires).

    Children are frozen for the whole phase. Raises :class:`LivelockError` as
    soon as a state is visited twice.
    """
    if fsm.phase is not Phase.WHEN:
        raise ValueError("run_when_phase requires the when phase")
    limit = 10_000 if max_iters is None else max_iters
    events: list[Event] = []
    visited = [fsm.s]
    for _ in range(limit):
        r = topmost(fsm.cls, fsm.s, fsm.chs)
        if isinstance(r, Fire) and isinstance(r.referer, MoveTo):
            target = r.referer.state
            events.append(MoveState(fsm.self_id, target))
            fsm = replace(fsm, s=target)
            if detect_livelock and target in visited:
                raise LivelockError(fsm.self_id, visited[visited.index(target):], events)
            visited.append(target)
            continue
        if isinstance(r, Fire):
            entry = program(fsm.cls)[fsm.s].action_entry.get(r.referer.action)
            if entry is not None:
                events.append(MovePhase(fsm.self_id, Phase.ACTION))
                fsm = replace(
                    fsm, phase=Phase.ACTION, act=ActPhaseState((), entry), command_received=True
                )
                return fsm, events
            # An absent action makes the referer a no-op; the phase ends as if settled.
        events.append(SendState(fsm.self_id, fsm.parent, fsm.s))
        events.append(MovePhase(fsm.self_id, Phase.ACTION))
        return _enter_action_phase(fsm), events
    raise RuntimeError(f"when phase of FSM {fsm.self_id} did not settle within {limit} steps")


# -- the action phase -------------------------------------------------------------


def receive_command(fsm: FsmInstance, command: str) -> tuple[FsmInstance, list[Event]]:
    if fsm.phase is not Phase.ACTION or fsm.pc != CLAUSE_SELECTOR:
        raise ValueError(
            f"FSM {fsm.self_id} cannot receive a command (phase={fsm.phase}, pc={fsm.pc})"
        )
    entry = program(fsm.cls)[fsm.s].action_entry.get(command)
    if entry is None:
        events: list[Event] = [
            SendState(fsm.self_id, fsm.parent, fsm.s),
            IgnoredCommand(fsm.self_id, command),
        ]
        return replace(fsm, act=replace(fsm.act, pc=END_OF_ACTION), command_received=True), events
    return replace(fsm, act=replace(fsm.act, pc=entry), command_received=True), []


@dataclass(frozen=True)
class Continue:
    fsm: FsmInstance
    events: list[Event] = field(default_factory=list)


@dataclass(frozen=True)
class BlockedOn:
    ids: frozenset[int]


@dataclass(frozen=True)
class ActionEnded:
    fsm: FsmInstance
    events: list[Event] = field(default_factory=list)


@dataclass(frozen=True)
class MovedTo:
    state: str
    fsm: FsmInstance
    events: list[Event] = field(default_factory=list)


StatementResult = Union[Continue, BlockedOn, ActionEnded, MovedTo]


def current_statement(fsm: FsmInstance) -> Labeled:
    try:
        return program(fsm.cls)[fsm.s].entries[fsm.pc]
    except KeyError:
        raise RuntimeError(f"FSM {fsm.self_id}: pc {fsm.pc} names no statement in {fsm.s}") from None


def pop_command(fsm: FsmInstance) -> tuple[FsmInstance, CommCommand]:
    """Send the head of the command queue: the addressed child becomes busy."""
    (target, cmd), rest = fsm.cq[0], fsm.cq[1:]
    chs = tuple(replace(c, busy=True) if c.id == target else c for c in fsm.chs)
    return replace(fsm, chs=chs, act=replace(fsm.act, cq=rest)), CommCommand(fsm.self_id, target, cmd)


def flush_queue(fsm: FsmInstance) -> tuple[FsmInstance, list[Event]]:
    events: list[Event] = []
    while fsm.cq:
        fsm, ev = pop_command(fsm)
        events.append(ev)
    return fsm, events


def _goto(fsm: FsmInstance, label: int, events: list[Event]) -> StatementResult:
    fsm = replace(fsm, act=replace(fsm.act, pc=label))
    if label == END_OF_ACTION:
        return ActionEnded(fsm, events)
    return Continue(fsm, events)


def exec_step(fsm: FsmInstance) -> StatementResult:
    """Execute the statement at the program counter.

    Pending commands are sent (and their children marked busy) before an
    ``if`` tests for busy children and before ``move_to`` leaves the action.
    """
    if fsm.phase is not Phase.ACTION or fsm.pc < 1:
        raise ValueError(f"exec_step requires pc >= 1 in the action phase (pc={fsm.pc})")
    entry = current_statement(fsm)
    stmt = entry.stmt
    if isinstance(stmt, Do):
        queued = tuple((c.id, stmt.command) for c in fsm.chs if stmt.pattern.matches(c.ptype))
        fsm = replace(fsm, act=replace(fsm.act, cq=fsm.cq + queued))
        return _goto(fsm, entry.next, [])
    if isinstance(stmt, MoveTo):
        fsm, events = flush_queue(fsm)
        events.append(MoveState(fsm.self_id, stmt.state))
        fsm = replace(fsm, s=stmt.state, phase=Phase.WHEN, act=ActPhaseState(), command_received=False)
        return MovedTo(stmt.state, fsm, events)
    if fsm.cq:
        # Queued commands go out first; the test itself is the next step.
        fsm, events = flush_queue(fsm)
        return Continue(fsm, events)
    busy = frozenset(c.id for c in referenced_children(stmt.guard, fsm.chs) if c.busy)
    if busy:
        return BlockedOn(busy)
    label = entry.then_label if eval_guard(stmt.guard, fsm.chs) else entry.else_label
    return _goto(fsm, label, [])


def blocked_on(fsm: FsmInstance) -> frozenset[int]:
    """Busy children an ``if`` at the program counter waits for (empty if none)."""
    if fsm.phase is not Phase.ACTION or fsm.pc < 1:
        return frozenset()
    stmt = current_statement(fsm).stmt
    if not isinstance(stmt, If):
        return frozenset()
    return frozenset(c.id for c in referenced_children(stmt.guard, fsm.chs) if c.busy)


def end_action(fsm: FsmInstance) -> tuple[FsmInstance, list[Event]]:
    """At label -1: empty the command queue and return to the when phase."""
    if fsm.phase is not Phase.ACTION or fsm.pc != END_OF_ACTION:
        raise ValueError("end_action requires pc = -1 in the action phase")
    fsm, events = flush_queue(fsm)
    events.append(MovePhase(fsm.self_id, Phase.WHEN))
    return replace(fsm, phase=Phase.WHEN, act=ActPhaseState(), command_received=False), events


def receive_state_update(fsm: FsmInstance, child_id: int, new_state: str) -> FsmInstance:
    if not any(c.id == child_id for c in fsm.chs):
        raise KeyError(f"FSM {fsm.self_id} has no child {child_id}")
    chs = tuple(
        replace(c, state=new_state, busy=False) if c.id == child_id else c for c in fsm.chs
    )
    fsm = replace(fsm, chs=chs)
    if fsm.phase is Phase.ACTION and fsm.pc == CLAUSE_SELECTOR and not fsm.command_received:
        fsm = replace(fsm, phase=Phase.WHEN, act=ActPhaseState())
    return fsm
