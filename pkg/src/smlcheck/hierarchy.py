"""Simulation of a tree of FSMs.

Every node is an FSM instance or a device stub. Commands travel down and
state-updates travel up:

* a command is a rendezvous between the head of the parent's command queue
  and a child that can take it (an FSM at its clause selector, or any stub);
* a state-update waits in a one-slot buffer per child (a newer update
  replaces an older one) and is taken whenever the parent is in its action
  phase;
* a whole when phase is one local step, since children are frozen during it.

Node 0 is the environment: it sends commands to the root and receives the
root's state-updates. Stubs acknowledge a command by moving to the state of
the same name, one local step after receiving it.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence, TextIO, Union

from .frontend import alphabet, ordered_states
from .parser import parse_file
from .semantics import (
    END_OF_ACTION,
    ActionEnded,
    BlockedOn,
    Child,
    CommCommand,
    CommState,
    Continue,
    Event,
    LivelockError,
    MoveState,
    MovedTo,
    Phase,
    SendState,
    FsmInstance,
    current_statement,
    end_action,
    event_to_json,
    exec_step,
    new_instance,
    pop_command,
    receive_command,
    receive_state_update,
    run_when_phase,
)
from .syntax import ClassDef, If, MoveTo

ENV = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: int
    cls: ClassDef
    parent: int | None
    stub: bool = False
    initial: str | None = None


@dataclass(frozen=True)
class Stub:
    id: int
    parent: int
    cls: ClassDef
    state: str
    # Last command received and not yet acknowledged (a newer one overrides it).
    command: str | None = None

    def key(self) -> tuple:
        return (self.state, self.command)


Node = Union[FsmInstance, Stub]


@dataclass
class Configuration:
    specs: dict[int, NodeSpec]
    root: int
    nodes: dict[int, Node]
    # child id -> latest state not yet taken by the parent
    pending: dict[int, str] = field(default_factory=dict)
    # command from the environment waiting for the root
    inbox: str | None = None
    # last state the root reported to the environment
    reported: str | None = None

    def children(self, node_id: int) -> list[int]:
        return [s.id for s in self.specs.values() if s.parent == node_id]

    @property
    def stubs(self) -> list[int]:
        return [i for i, s in self.specs.items() if s.stub]

    def copy(self) -> "Configuration":
        return Configuration(
            self.specs, self.root, dict(self.nodes), dict(self.pending), self.inbox, self.reported
        )

    def key(self) -> tuple:
        return (
            tuple(sorted((i, n.key()) for i, n in self.nodes.items())),
            tuple(sorted(self.pending.items())),
            self.inbox,
        )

    def digest(self) -> str:
        return hashlib.sha256(repr(self.key()).encode()).hexdigest()[:16]


# -- loading -------------------------------------------------------------------


def _resolve_class(name: str, base: Path, classes: dict[str, ClassDef]) -> ClassDef:
    if name in classes:
        return classes[name]
    path = base / name
    if name.endswith(".sml") and path.is_file():
        found = parse_file(path)
        for c in found:
            classes.setdefault(c.name, c)
        return found[0]
    raise ConfigError(f"unknown class {name!r}")


def configure(specs: Iterable[NodeSpec]) -> Configuration:
    """Validate a tree of node specs and build the initial configuration."""
    by_id: dict[int, NodeSpec] = {}
    for s in specs:
        if s.id == ENV:
            raise ConfigError("node id 0 is reserved for the environment")
        if s.id in by_id:
            raise ConfigError(f"duplicate node id {s.id}")
        by_id[s.id] = s
    roots = [s.id for s in by_id.values() if s.parent is None]
    if len(roots) != 1:
        raise ConfigError(f"expected exactly one root, found {len(roots)}: {roots}")
    for s in by_id.values():
        if s.parent is not None and s.parent not in by_id:
            raise ConfigError(f"node {s.id} has unknown parent {s.parent}")
    for s in by_id.values():
        seen = {s.id}
        p = s.parent
        while p is not None:
            if p in seen:
                raise ConfigError(f"cycle through node {p}")
            seen.add(p)
            p = by_id[p].parent
    for s in by_id.values():
        if s.stub and any(c.parent == s.id for c in by_id.values()):
            raise ConfigError(f"stub {s.id} cannot have children")
        if s.initial is not None and s.initial not in ordered_states(s.cls):
            raise ConfigError(f"node {s.id}: {s.initial!r} is not a state of {s.cls.name}")

    def initial(s: NodeSpec) -> str:
        return s.initial if s.initial is not None else s.cls.initial_state

    nodes: dict[int, Node] = {}
    for s in sorted(by_id.values(), key=lambda s: s.id):
        parent = ENV if s.parent is None else s.parent
        if s.stub:
            nodes[s.id] = Stub(s.id, parent, s.cls, initial(s))
            continue
        kids = [
            Child(c.id, initial(c), c.cls.name)
            for c in sorted(by_id.values(), key=lambda c: c.id)
            if c.parent == s.id
        ]
        nodes[s.id] = new_instance(s.cls, s.id, parent, kids, initial(s))
    return Configuration(by_id, roots[0], nodes)


def load_config(path, classes: dict[str, ClassDef] | None = None) -> Configuration:
    """Read the JSON topology format. A node's ``class`` is either a class
    name (from ``classes`` or a .sml file loaded earlier) or a .sml path
    relative to the topology file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    base = path.parent
    classes = dict(classes or {})
    for sml in sorted(base.glob("*.sml")):
        for c in parse_file(sml):
            classes.setdefault(c.name, c)
    specs = []
    for raw in doc.get("nodes", []):
        try:
            specs.append(
                NodeSpec(
                    int(raw["id"]),
                    _resolve_class(raw["class"], base, classes),
                    None if raw.get("parent") is None else int(raw["parent"]),
                    bool(raw.get("stub", False)),
                    raw.get("initial"),
                )
            )
        except KeyError as e:
            raise ConfigError(f"node entry {raw} lacks field {e}") from None
    if not specs:
        raise ConfigError(f"{path}: no nodes")
    return configure(specs)


# -- steps --------------------------------------------------------------------------


class LocalStep(NamedTuple):
    id: int


class Rendezvous(NamedTuple):
    sender: int
    receiver: int
    kind: str  # "command" or "state"
    payload: str


class Injection(NamedTuple):
    target: int
    kind: str  # "command" (to the root) or "state" (of a stub)
    payload: str


SimStep = Union[LocalStep, Rendezvous, Injection]


def step_to_json(step: SimStep) -> dict:
    return {"step": type(step).__name__, **step._asdict()}


def _accepts_command(node: Node) -> bool:
    if isinstance(node, Stub):
        return True
    return node.phase is Phase.ACTION and node.pc == 0


def _flush_point(fsm: FsmInstance) -> bool:
    """Whether the FSM must send queued commands before its next statement."""
    if not fsm.cq:
        return False
    if fsm.pc == END_OF_ACTION:
        return True
    return isinstance(current_statement(fsm).stmt, (If, MoveTo))


def _local_enabled(fsm: FsmInstance) -> bool:
    if fsm.phase is Phase.WHEN:
        return True
    if fsm.pc == 0 or _flush_point(fsm):
        return False
    if fsm.pc == END_OF_ACTION:
        return True
    return not isinstance(exec_step(fsm), BlockedOn)


def internal_steps(config: Configuration) -> list[SimStep]:
    """Enabled steps that need no input from the environment."""
    steps: list[SimStep] = []
    nodes = config.nodes
    for i, node in nodes.items():
        if isinstance(node, Stub):
            if node.command is not None:
                steps.append(LocalStep(i))
            continue
        if _local_enabled(node):
            steps.append(LocalStep(i))
        elif node.phase is Phase.ACTION and _flush_point(node):
            target, cmd = node.cq[0]
            if _accepts_command(nodes[target]):
                steps.append(Rendezvous(i, target, "command", cmd))
    for child, state in config.pending.items():
        parent = nodes[child].parent
        if nodes[parent].phase is Phase.ACTION:
            steps.append(Rendezvous(child, parent, "state", state))
    if config.inbox is not None and _accepts_command(nodes[config.root]):
        steps.append(Rendezvous(ENV, config.root, "command", config.inbox))
    return steps


def root_commands(config: Configuration) -> list[str]:
    return sorted(alphabet(config.specs[config.root].cls).commands)


def stub_states(config: Configuration, stub_id: int) -> list[str]:
    return ordered_states(config.specs[stub_id].cls)


def injection_steps(
    config: Configuration, commands: Sequence[str] | None = None, stub_faults: bool = True
) -> list[SimStep]:
    """Environment inputs: a root command while the root's inbox is empty, and
    any state change of a device stub."""
    steps: list[SimStep] = []
    if config.inbox is None:
        cmds = root_commands(config) if commands is None else commands
        steps.extend(Injection(config.root, "command", c) for c in cmds)
    if not stub_faults:
        return steps
    for i in config.stubs:
        cur = config.nodes[i].state
        steps.extend(Injection(i, "state", s) for s in stub_states(config, i) if s != cur)
    return steps


def enabled_steps(config: Configuration) -> list[SimStep]:
    return internal_steps(config) + injection_steps(config)


def is_idle(node: Node) -> bool:
    if isinstance(node, Stub):
        return node.command is None
    return node.phase is Phase.ACTION and node.pc == 0


def _emit(config: Configuration, events: list[Event]) -> None:
    """Turn SendState events into pending state-updates."""
    for ev in events:
        if isinstance(ev, SendState):
            if ev.parent == ENV:
                config.reported = ev.state
            else:
                config.pending[ev.id] = ev.state


class Livelock(Exception):
    def __init__(self, node_id: int, cycle: list[str]):
        self.node_id = node_id
        self.cycle = cycle
        super().__init__(f"node {node_id} loops in the when phase: {' -> '.join(cycle + cycle[:1])}")


def inject(config: Configuration, target: int, kind: str, payload: str) -> tuple[Configuration, list[Event]]:
    if kind == "command":
        if target != config.root:
            raise ConfigError(f"commands can only be injected at the root ({config.root}), not {target}")
        if payload not in root_commands(config):
            raise ConfigError(f"root class has no command {payload!r}")
        config = config.copy()
        config.inbox = payload
        return config, []
    if kind == "state":
        if target not in config.specs or not config.specs[target].stub:
            raise ConfigError(f"states can only be injected at device stubs, not node {target}")
        if payload not in stub_states(config, target):
            raise ConfigError(f"{payload!r} is not a state of stub {target}")
        config = config.copy()
        stub = config.nodes[target]
        config.nodes[target] = replace(stub, state=payload)
        events: list[Event] = [MoveState(target, payload), SendState(target, stub.parent, payload)]
        _emit(config, events)
        return config, events
    raise ConfigError(f"unknown injection kind {kind!r}")


def apply_step(config: Configuration, step: SimStep) -> tuple[Configuration, list[Event]]:
    """Fire one enabled step. Raises :class:`Livelock` if a when phase loops."""
    if isinstance(step, Injection):
        return inject(config, step.target, step.kind, step.payload)
    config = config.copy()
    nodes = config.nodes
    events: list[Event] = []
    if isinstance(step, LocalStep):
        node = nodes[step.id]
        if isinstance(node, Stub):
            state = node.command if node.command in ordered_states(node.cls) else node.state
            nodes[step.id] = replace(node, state=state, command=None)
            if state != node.state:
                events.append(MoveState(node.id, state))
            events.append(SendState(node.id, node.parent, state))
        elif node.phase is Phase.WHEN:
            try:
                fsm, events = run_when_phase(node)
            except LivelockError as e:
                raise Livelock(node.self_id, e.cycle) from None
            nodes[step.id] = fsm
        elif node.pc == END_OF_ACTION:
            fsm, events = end_action(node)
            nodes[step.id] = fsm
        else:
            r = exec_step(node)
            if isinstance(r, BlockedOn):
                raise ValueError(f"node {step.id} is blocked on {sorted(r.ids)}")
            nodes[step.id] = r.fsm
            events = list(r.events)
    elif step.kind == "command":
        if step.sender == ENV:
            config.inbox = None
        else:
            sender, ev = pop_command(nodes[step.sender])
            nodes[step.sender] = sender
            events.append(ev)
        receiver = nodes[step.receiver]
        if step.sender == ENV:
            events.append(CommCommand(ENV, step.receiver, step.payload))
        if isinstance(receiver, Stub):
            nodes[step.receiver] = replace(receiver, command=step.payload)
        else:
            fsm, evs = receive_command(receiver, step.payload)
            nodes[step.receiver] = fsm
            events.extend(evs)
    else:
        del config.pending[step.sender]
        nodes[step.receiver] = receive_state_update(nodes[step.receiver], step.sender, step.payload)
        events.append(CommState(step.sender, step.receiver, step.payload))
    _emit(config, events)
    return config, events


# -- drivers -------------------------------------------------------------------


@dataclass
class TraceEntry:
    index: int
    step: SimStep
    events: list[Event]

    def to_json(self) -> dict:
        return {
            "index": self.index,
            **step_to_json(self.step),
            "events": [event_to_json(e) for e in self.events],
        }


@dataclass
class Outcome:
    status: str  # "completed", "quiescent", "deadlock" or "livelock"
    steps: int
    config: Configuration
    detail: dict = field(default_factory=dict)
    trace: list[TraceEntry] = field(default_factory=list)
    checkpoints: list[tuple[int, str]] = field(default_factory=list)
    seed: int | None = None

    @property
    def finding(self) -> bool:
        return self.status in ("deadlock", "livelock")


class ScriptEntry(NamedTuple):
    at: int
    target: int
    kind: str
    payload: str


def read_script(lines: Iterable[str]) -> list[ScriptEntry]:
    out = []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            inj = doc["inject"]
            kind = "command" if "command" in inj else "state"
            out.append(ScriptEntry(int(doc.get("at", 0)), int(inj["target"]), kind, inj[kind]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"script line {n}: {e}") from None
    return sorted(out, key=lambda e: e.at)


def check_script(config: Configuration, script: Sequence[ScriptEntry]) -> None:
    for e in script:
        if e.target not in config.specs:
            raise ConfigError(f"script injects at unknown node {e.target}")
        if e.kind == "command":
            if e.target != config.root:
                raise ConfigError(f"script sends a command to non-root node {e.target}")
            if e.payload not in root_commands(config):
                raise ConfigError(f"script uses unknown command {e.payload!r}")
        else:
            if not config.specs[e.target].stub:
                raise ConfigError(f"script sets the state of non-stub node {e.target}")
            if e.payload not in stub_states(config, e.target):
                raise ConfigError(f"script uses unknown state {e.payload!r} for node {e.target}")


Chooser = Callable[[Configuration, list[SimStep], int], Union[SimStep, None]]


def run(
    config: Configuration,
    driver: str = "random",
    seed: int = 0,
    max_steps: int = 1000,
    script: Sequence[ScriptEntry] = (),
    chooser: Chooser | None = None,
    keep_trace: bool = True,
    on_step: Callable[[int, SimStep, list[Event]], None] | None = None,
    checkpoint_every: int = 1000,
) -> Outcome:
    """Run a simulation.

    ``random`` picks uniformly among all enabled steps (environment
    injections included); ``script`` fires the scripted injections at their
    step index and otherwise the first enabled internal step; ``interactive``
    asks ``chooser`` (returning None stops the run).
    """
    if max_steps < 1:
        raise ValueError("max_steps must be positive")
    if driver not in ("random", "script", "interactive"):
        raise ValueError(f"unknown driver {driver!r}")
    check_script(config, script)
    rng = random.Random(seed)
    queue = list(script)
    out = Outcome("completed", 0, config, seed=seed if driver == "random" else None)

    def record(i: int, step: SimStep, events: list[Event]) -> None:
        if keep_trace:
            out.trace.append(TraceEntry(i, step, events))
        if on_step is not None:
            on_step(i, step, events)

    i = 0
    while i < max_steps:
        while queue and queue[0].at <= i and i < max_steps:
            e = queue.pop(0)
            step = Injection(e.target, e.kind, e.payload)
            config, events = apply_step(config, step)
            record(i, step, events)
            i += 1
        if i >= max_steps:
            break
        internal = internal_steps(config)
        stuck = not internal and not all(is_idle(n) for n in config.nodes.values())
        if stuck and not (driver == "script" and queue):
            out.status = "deadlock"
            out.detail = {"busy": sorted(k for k, n in config.nodes.items() if not is_idle(n))}
            break
        if driver == "random":
            choices = internal + injection_steps(config)
            step = choices[rng.randrange(len(choices))]
        elif driver == "script":
            if not internal:
                if not queue:
                    out.status = "quiescent"
                    break
                i = max(i, queue[0].at)
                continue
            step = internal[0]
        else:
            step = chooser(config, internal + injection_steps(config), i)
            if step is None:
                break
        try:
            config, events = apply_step(config, step)
        except Livelock as e:
            out.status = "livelock"
            out.detail = {"node": e.node_id, "cycle": e.cycle}
            break
        record(i, step, events)
        i += 1
        if checkpoint_every and i % checkpoint_every == 0:
            out.checkpoints.append((i, config.digest()))
    out.steps = i
    out.config = config
    return out


def write_trace(out: Outcome, f: TextIO) -> None:
    for entry in out.trace:
        f.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
    f.write(
        json.dumps(
            {
                "outcome": out.status,
                "steps": out.steps,
                "seed": out.seed,
                "detail": out.detail,
                "checkpoints": out.checkpoints,
                "final": out.config.digest(),
            },
            sort_keys=True,
        )
        + "\n"
    )


# -- exhaustive exploration ------------------------------------------------------


@dataclass
class Exploration:
    states: int
    transitions: int
    deadlocks: list[Configuration]
    livelocks: list[tuple[int, list[str]]]
    complete: bool
    visited: set | None = None  # configuration keys, when requested


def explore(
    config: Configuration,
    limit: int = 1_000_000,
    commands: Sequence[str] | None = None,
    stub_faults: bool = True,
    keep_states: bool = False,
) -> Exploration:
    """Breadth-first search over every reachable configuration, environment
    inputs included (``commands`` and ``stub_faults`` narrow them)."""
    seen = {config.key()}
    frontier = [config]
    transitions = 0
    deadlocks: list[Configuration] = []
    livelocks: list[tuple[int, list[str]]] = []
    while frontier:
        nxt = []
        for c in frontier:
            internal = internal_steps(c)
            if not internal and not all(is_idle(n) for n in c.nodes.values()):
                deadlocks.append(c)
            for step in internal + injection_steps(c, commands, stub_faults):
                try:
                    d, _ = apply_step(c, step)
                except Livelock as e:
                    livelocks.append((e.node_id, e.cycle))
                    continue
                transitions += 1
                k = d.key()
                if k not in seen:
                    if len(seen) >= limit:
                        return Exploration(
                            len(seen), transitions, deadlocks, livelocks, False, seen if keep_states else None
                        )
                    seen.add(k)
                    nxt.append(d)
        frontier = nxt
    return Exploration(
        len(seen), transitions, deadlocks, livelocks, True, seen if keep_states else None
    )


# -- REPL -------------------------------------------------------------------------


def describe(node: Node) -> str:
    if isinstance(node, Stub):
        pending = f", pending command {node.command}" if node.command else ""
        return f"stub {node.id} ({node.cls.name}) in {node.state}{pending}"
    chs = ", ".join(f"{c.id}:{c.state}{'*' if c.busy else ''}" for c in node.chs)
    return (
        f"fsm {node.self_id} ({node.cls.name}) in {node.s}, {node.phase}, pc={node.pc}, "
        f"cq={list(node.cq)}, children=[{chs}]"
    )


def repl(config: Configuration, inp: TextIO, out: TextIO, max_steps: int = 10_000) -> Outcome:
    """Line-oriented driver: ``steps``, ``fire <k>``, ``inject <id> <payload>``,
    ``show <id>``, ``quit``."""
    trace: list[TraceEntry] = []
    i = 0
    status = "completed"

    def prompt() -> Iterator[str]:
        while True:
            out.write("sml> ")
            out.flush()
            line = inp.readline()
            if not line:
                return
            yield line.strip()

    for line in prompt():
        if i >= max_steps:
            break
        words = line.split()
        if not words:
            continue
        cmd, args = words[0], words[1:]
        try:
            if cmd == "quit":
                break
            if cmd == "steps":
                for k, s in enumerate(internal_steps(config)):
                    out.write(f"  [{k}] {s}\n")
            elif cmd == "show":
                ids = [int(args[0])] if args else sorted(config.nodes)
                for n in ids:
                    out.write(describe(config.nodes[n]) + "\n")
            elif cmd == "fire":
                steps = internal_steps(config)
                step = steps[int(args[0])]
                config, events = apply_step(config, step)
                trace.append(TraceEntry(i, step, events))
                i += 1
                for e in events:
                    out.write(f"  {e}\n")
            elif cmd == "inject":
                target, payload = int(args[0]), args[1]
                kind = "command" if target == config.root else "state"
                step = Injection(target, kind, payload)
                config, events = apply_step(config, step)
                trace.append(TraceEntry(i, step, events))
                i += 1
            else:
                out.write(f"unknown command {cmd!r}\n")
        except Livelock as e:
            out.write(f"livelock: {e}\n")
            status = "livelock"
            break
        except (ConfigError, IndexError, ValueError, KeyError) as e:
            out.write(f"error: {e}\n")
    return Outcome(status, i, config, trace=trace)
