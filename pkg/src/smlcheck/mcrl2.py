"""Export of SML classes and configurations as mCRL2 specifications, plus
modal mu-calculus property templates.

Every class becomes a process ``X_CLASS(self, parent, s, chs, phase, aArgs)``.
The when phase of a state is a chain of ``guard -> ... <> ...`` conditionals
ending in ``send_state``/``move_phase``; the action phase dispatches on the
program counter: 0 is the clause selector, -1 empties the command queue and
returns to the when phase, and every statement has a positive label.

Identifiers containing ``$`` are mangled (``$`` becomes ``_S_``); the mapping
is listed in a comment at the top of the output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .frontend import alphabet, ordered_states
from .semantics import END_OF_ACTION, StateProgram, program
from .syntax import FWCHILDREN, And, Atom, ClassDef, Do, DoAction, Guard, If, MoveTo, atoms, walk_statements

ACTIONS = [
    ("move_state", "Id # State"),
    ("send_state, receive_state, comm_state", "Id # Id # State"),
    ("move_phase", "Id # Phase"),
    ("send_command, receive_command, comm_command", "Id # Id # Command"),
    ("ignored_command", "Id # Command"),
]
VISIBLE = ["comm_command", "comm_state", "move_state", "move_phase", "ignored_command"]


def mangle(name: str) -> str:
    return name.replace("$", "_S_")


def demangle(name: str) -> str:
    return name.replace("_S_", "$")


def process_name(cls: ClassDef) -> str:
    n = mangle(cls.name)
    return n if n.endswith("_CLASS") else n + "_CLASS"


def ptype_name(t: str) -> str:
    return "P_" + mangle(t)


# -- vocabulary shared by all processes of one specification ----------------------


@dataclass
class Vocabulary:
    states: list[str]
    commands: list[str]
    ptypes: list[str]
    names: dict[str, str]  # mangled -> original, for names that changed

    @classmethod
    def of(cls_, classes: Sequence[ClassDef]) -> "Vocabulary":
        states: dict[str, None] = {}
        commands: dict[str, None] = {}
        ptypes: dict[str, None] = {}
        for c in classes:
            ptypes[c.name] = None
            for s in ordered_states(c):
                states[s] = None
            for st in c.states:
                for w in st.whens:
                    for a in atoms(w.guard):
                        for s in a.order or sorted(a.states):
                            states[s] = None
                for act in st.actions:
                    for stmt in walk_statements(act.body):
                        if isinstance(stmt, If):
                            for a in atoms(stmt.guard):
                                for s in a.order or sorted(a.states):
                                    states[s] = None
            for cmd in sorted(alphabet(c).commands):
                commands[cmd] = None
            for p in c.patterns():
                ptypes[p.selector] = None
        ptypes.pop(FWCHILDREN, None)
        names = {}
        for n in [*states, *commands, *ptypes, *(c.name for c in classes)]:
            if mangle(n) != n:
                names[mangle(n)] = n
        return cls_(list(states), list(commands), sorted(ptypes), names)


def _header(vocab: Vocabulary) -> list[str]:
    lines = ["% Generated from SML; do not edit."]
    if vocab.names:
        lines.append("% Name mapping (mCRL2 <- SML):")
        for m, o in sorted(vocab.names.items()):
            lines.append(f"%   {m} <- {o}")
    return lines


def _sorts(vocab: Vocabulary) -> list[str]:
    states = " | ".join(f"{mangle(s)}?instate_{mangle(s)}" for s in vocab.states)
    commands = " | ".join(f"{mangle(c)}?isC_{mangle(c)}" for c in vocab.commands) or "NoCommand"
    ptypes = " | ".join(ptype_name(t) for t in [*vocab.ptypes, FWCHILDREN])
    return [
        "sort",
        "  Id = Int;",
        f"  State = struct {states};",
        f"  Command = struct {commands};",
        f"  PType = struct {ptypes};",
        "  Phase = struct WhenPhase?isWhenPhase | ActionPhase?isActPhase;",
        "  Child = struct child(id: Id, state: State, ptype: PType, busy: Bool);",
        "  Children = List(Child);",
        "  QEntry = struct entry(target: Id, cmd: Command);",
        "  CommandQueue = List(QEntry);",
        "  ActPhaseArgs = struct actArgs(cq: CommandQueue, pc: Int);",
        "",
    ]


def _maps(vocab: Vocabulary, helpers: list[tuple[str, str, str]]) -> list[str]:
    homonyms = [c for c in vocab.commands if c in vocab.states]
    lines = [
        "map",
        "  matches: PType # PType -> Bool;",
        "  any_in, all_in: Children # PType # Set(State) -> Bool;",
        "  any_busy: Children # PType -> Bool;",
        "  reset: ActPhaseArgs -> ActPhaseArgs;",
        "  update_pc: ActPhaseArgs # Int -> ActPhaseArgs;",
        "  add_commands: Children # PType # Command # ActPhaseArgs -> ActPhaseArgs;",
        "  pop: ActPhaseArgs -> ActPhaseArgs;",
        "  set_busy: Children # Id -> Children;",
        "  update_child: Children # Id # State -> Children;",
        "  has_child: Children # Id -> Bool;",
        "  has_state: Command -> Bool;",
        "  c2s: Command -> State;",
    ]
    for name, _, _ in helpers:
        lines.append(f"  {name}: Children # ActPhaseArgs -> ActPhaseArgs;")
    lines += [
        "var",
        "  ch: Child; cs: Children; t, u: PType; ss: Set(State); q: CommandQueue;",
        "  n, k: Int; i: Id; st: State; c: Command; a: ActPhaseArgs; e: QEntry;",
        "eqn",
        f"  matches({ptype_name(FWCHILDREN)}, u) = true;",
        f"  t != {ptype_name(FWCHILDREN)} -> matches(t, u) = t == u;",
        "  any_in([], t, ss) = false;",
        "  any_in(ch |> cs, t, ss) = (matches(t, ptype(ch)) && state(ch) in ss) || any_in(cs, t, ss);",
        "  all_in([], t, ss) = true;",
        "  all_in(ch |> cs, t, ss) = (!matches(t, ptype(ch)) || state(ch) in ss) && all_in(cs, t, ss);",
        "  any_busy([], t) = false;",
        "  any_busy(ch |> cs, t) = (matches(t, ptype(ch)) && busy(ch)) || any_busy(cs, t);",
        "  reset(actArgs(q, n)) = actArgs([], 0);",
        "  update_pc(actArgs(q, n), k) = actArgs(q, k);",
        "  add_commands([], t, c, a) = a;",
        "  add_commands(ch |> cs, t, c, actArgs(q, n)) =",
        "    add_commands(cs, t, c, if(matches(t, ptype(ch)), actArgs(q <| entry(id(ch), c), n), actArgs(q, n)));",
        "  pop(actArgs([], n)) = actArgs([], n);",
        "  pop(actArgs(e |> q, n)) = actArgs(q, n);",
        "  set_busy([], i) = [];",
        "  set_busy(ch |> cs, i) =",
        "    if(id(ch) == i, child(id(ch), state(ch), ptype(ch), true), ch) |> set_busy(cs, i);",
        "  update_child([], i, st) = [];",
        "  update_child(ch |> cs, i, st) =",
        "    if(id(ch) == i, child(i, st, ptype(ch), false), ch) |> update_child(cs, i, st);",
        "  has_child([], i) = false;",
        "  has_child(ch |> cs, i) = id(ch) == i || has_child(cs, i);",
    ]
    for c in vocab.commands:
        m = mangle(c)
        lines.append(f"  has_state({m}) = {'true' if c in homonyms else 'false'};")
    for c in homonyms:
        m = mangle(c)
        lines.append(f"  c2s({m}) = {m};")
    for name, sel, cmd in helpers:
        lines.append(f"  {name}(cs, a) = add_commands(cs, {ptype_name(sel)}, {mangle(cmd)}, a);")
    lines.append("")
    return lines


def _acts() -> list[str]:
    return ["act"] + [f"  {names}: {sig};" for names, sig in ACTIONS] + [""]


# -- translation of one class --------------------------------------------------------


def translate_guard(g: Guard) -> str:
    if isinstance(g, Atom):
        names = g.order or tuple(sorted(g.states))
        fn = "any_in" if g.pattern.quantifier == "ANY" else "all_in"
        states = ", ".join(mangle(s) for s in names)
        return f"{fn}(chs, {ptype_name(g.pattern.selector)}, {{{states}}})"
    op = "&&" if isinstance(g, And) else "||"
    return f"({translate_guard(g.left)} {op} {translate_guard(g.right)})"


def _busy_test(g: Guard) -> str:
    sels = list(dict.fromkeys(a.pattern.selector for a in atoms(g)))
    return " || ".join(f"any_busy(chs, {ptype_name(s)})" for s in sels)


def helper_name(sel: str, cmd: str) -> str:
    return f"add_{mangle(sel)}_{mangle(cmd)}_commands"


def do_helpers(classes: Iterable[ClassDef]) -> list[tuple[str, str, str]]:
    out: dict[str, tuple[str, str, str]] = {}
    for c in classes:
        for st in c.states:
            for act in st.actions:
                for stmt in walk_statements(act.body):
                    if isinstance(stmt, Do):
                        name = helper_name(stmt.pattern.selector, stmt.command)
                        out.setdefault(name, (name, stmt.pattern.selector, stmt.command))
    return list(out.values())


def _call(p: str, s: str = "s", chs: str = "chs", phase: str = "phase", args: str = "aArgs") -> str:
    return f"{p}(self,parent,{s},{chs},{phase},{args})"


def _program(cls: ClassDef, state: str) -> StateProgram:
    # move_to targets that are not declared have no clauses at all
    return program(cls).get(state) or StateProgram({}, {})


def _when_block(cls: ClassDef, state: str, p: str) -> list[str]:
    st = cls.state(state)
    lines = [f"  instate_{mangle(state)}(s) && isWhenPhase(phase) -> ("]
    entries = _program(cls, state).action_entry
    for w in st.whens if st is not None else ():
        ref = w.referer
        if isinstance(ref, MoveTo):
            t = mangle(ref.state)
            lines.append(f"    {translate_guard(w.guard)} ->")
            lines.append(f"      move_state(self,{t}).")
            lines.append(f"      {_call(p, s=t)} <>")
        elif ref.action in entries:
            lines.append(f"    {translate_guard(w.guard)} ->")
            lines.append("      move_phase(self,ActionPhase).")
            lines.append(
                f"      {_call(p, phase='ActionPhase', args=f'update_pc(reset(aArgs),{entries[ref.action]})')} <>"
            )
        # A do referer naming no action of this state ends the phase like a
        # false guard list would, so it adds no branch.
    lines.append("    send_state(self,parent,s).")
    lines.append("    move_phase(self,ActionPhase).")
    lines.append(f"    {_call(p, phase='ActionPhase', args='reset(aArgs)')})")
    return lines


def _flush_or(p: str, rest: str, indent: str) -> list[str]:
    """Send the head of the queue if there is one, otherwise behave as ``rest``."""
    return [
        f"{indent}cq(aArgs) != [] ->",
        f"{indent}  send_command(self,target(head(cq(aArgs))),cmd(head(cq(aArgs)))).",
        f"{indent}  {_call(p, chs='set_busy(chs,target(head(cq(aArgs))))', args='pop(aArgs)')} <>",
        f"{indent}{rest}",
    ]


def _action_block(cls: ClassDef, state: str, p: str) -> list[str]:
    st = cls.state(state)
    prog = _program(cls, state)
    lines = [f"  instate_{mangle(state)}(s) && isActPhase(phase) -> ("]
    # Clause selector.
    lines.append("    pc(aArgs) == 0 ->")
    lines.append("      sum c:Command.(")
    lines.append("        receive_command(parent,self,c).(")
    for act in st.actions if st is not None else ():
        lines.append(f"        isC_{mangle(act.name)}(c) ->")
        lines.append(f"          {_call(p, args=f'update_pc(aArgs,{prog.action_entry[act.name]})')} <>")
    lines.append("        send_state(self,parent,s).")
    lines.append("        ignored_command(self,c).")
    lines.append(f"        {_call(p, args=f'update_pc(aArgs,{END_OF_ACTION})')})) +")
    for label in sorted(prog.entries):
        e = prog.entries[label]
        stmt = e.stmt
        lines.append(f"    pc(aArgs) == {label} ->")
        if isinstance(stmt, Do):
            helper = helper_name(stmt.pattern.selector, stmt.command)
            lines.append(f"      {_call(p, args=f'{helper}(chs,update_pc(aArgs,{e.next}))')} +")
        elif isinstance(stmt, MoveTo):
            t = mangle(stmt.state)
            rest = f"move_state(self,{t}). {_call(p, s=t, phase='WhenPhase', args='reset(aArgs)')}"
            lines += _flush_or(p, "(" + rest + ")", "      ")
            lines[-1] += " +"
        else:
            rest = (
                f"(!({_busy_test(stmt.guard)}) -> ({translate_guard(stmt.guard)} -> "
                f"{_call(p, args=f'update_pc(aArgs,{e.then_label})')} <> "
                f"{_call(p, args=f'update_pc(aArgs,{e.else_label})')}))"
            )
            lines += _flush_or(p, rest, "      ")
            lines[-1] += " +"
    # End of action: empty the queue, then back to the when phase.
    lines.append(f"    pc(aArgs) == {END_OF_ACTION} ->")
    lines += _flush_or(
        p, f"(move_phase(self,WhenPhase). {_call(p, phase='WhenPhase', args='reset(aArgs)')}))", "      "
    )
    return lines


def export_process(cls: ClassDef) -> str:
    """The process definition of one class (without sorts or an init)."""
    p = process_name(cls)
    lines = [
        f"proc {p}(self: Id, parent: Id, s: State, chs: Children, phase: Phase, aArgs: ActPhaseArgs) ="
    ]
    blocks = []
    for state in ordered_states(cls):
        blocks.append(_when_block(cls, state, p))
    for state in ordered_states(cls):
        blocks.append(_action_block(cls, state, p))
    # State-updates: before any command they send the FSM back to the when
    # phase; in the middle of an action they are only recorded.
    blocks.append(
        [
            "  isActPhase(phase) -> sum i:Id, t:State. has_child(chs,i) ->",
            "    receive_state(i,self,t).",
            "    (pc(aArgs) == 0 ->",
            f"      {_call(p, chs='update_child(chs,i,t)', phase='WhenPhase', args='reset(aArgs)')} <>",
            f"      {_call(p, chs='update_child(chs,i,t)')})",
        ]
    )
    for b in blocks[:-1]:
        b[-1] += " +"
    for b in blocks:
        lines += b
    lines[-1] += ";"
    return "\n".join(lines) + "\n"


STUB_PROCESS = """\
proc STUB(self: Id, parent: Id, s: State, alph: Set(State), pending: Bool) =
  sum c:Command. receive_command(parent,self,c).
    (has_state(c) && c2s(c) in alph ->
      move_state(self,c2s(c)). STUB(self,parent,c2s(c),alph,true) <>
      STUB(self,parent,s,alph,true)) +
  pending -> send_state(self,parent,s). STUB(self,parent,s,alph,false) +
  sum t:State. (t in alph && t != s) -> move_state(self,t). STUB(self,parent,t,alph,true);

proc ENV(root: Id) =
  sum c:Command. send_command(0,root,c). ENV(root) +
  sum t:State. receive_state(root,0,t). ENV(root);
"""


def _unit(classes: Sequence[ClassDef], body: list[str], init: str) -> str:
    vocab = Vocabulary.of(classes)
    lines = _header(vocab) + [""]
    lines += _sorts(vocab)
    lines += _maps(vocab, do_helpers(classes))
    lines += _acts()
    lines.append("\n\n".join(b.rstrip("\n") for b in body))
    lines.append("")
    lines.append(init)
    return "\n".join(lines) + "\n"


def export_class(cls: ClassDef) -> str:
    """A self-contained specification: one instance of the class, without
    children, whose parent is the environment."""
    return export_classes([cls])


def export_classes(classes: Sequence[ClassDef]) -> str:
    """Process definitions for several classes; the init runs the first one."""
    cls = classes[0]
    p = process_name(cls)
    init = (
        "init\n"
        f"  allow({{{', '.join(VISIBLE)}}},\n"
        "    comm({send_command|receive_command -> comm_command, send_state|receive_state -> comm_state},\n"
        f"      ENV(1) || {p}(1,0,{mangle(cls.initial_state)},[],WhenPhase,actArgs([],0))));"
    )
    return _unit(classes, [*(export_process(c) for c in classes), STUB_PROCESS], init)


def export_system(config) -> str:
    """One process instance per node of a :class:`hierarchy.Configuration`,
    composed in parallel with the environment (id 0)."""
    specs = [config.specs[i] for i in sorted(config.specs)]
    classes: list[ClassDef] = []
    for s in specs:
        if s.cls not in classes:
            classes.append(s.cls)
    fsm_classes = [c for c in classes if any(s.cls is c and not s.stub for s in specs)]

    def initial(s) -> str:
        return s.initial if s.initial is not None else s.cls.initial_state

    instances = []
    for s in specs:
        parent = 0 if s.parent is None else s.parent
        if s.stub:
            alph = ", ".join(mangle(x) for x in ordered_states(s.cls))
            instances.append(f"STUB({s.id},{parent},{mangle(initial(s))},{{{alph}}},false)")
            continue
        kids = ", ".join(
            f"child({c.id},{mangle(initial(c))},{ptype_name(c.cls.name)},false)"
            for c in specs
            if c.parent == s.id
        )
        instances.append(
            f"{process_name(s.cls)}({s.id},{parent},{mangle(initial(s))},[{kids}],WhenPhase,actArgs([],0))"
        )
    par = "\n      || ".join([f"ENV({config.root})", *instances])
    init = (
        "init\n"
        f"  allow({{{', '.join(VISIBLE)}}},\n"
        "    comm({send_command|receive_command -> comm_command, send_state|receive_state -> comm_state},\n"
        f"      {par}));"
    )
    body = [export_process(c) for c in fsm_classes] + [STUB_PROCESS]
    return _unit(classes, body, init)


# -- properties --------------------------------------------------------------------

TEMPLATES: dict[str, tuple[str, tuple[str, ...]]] = {
    "deadlock-freedom": ("nu X. [true]X && <true>true", ()),
    "no-intermediate-states": (
        "nu X. [true]X &&\n"
        "  [exists s:State. move_state(i,s)](nu Y.\n"
        "    [(!move_phase(i,ActionPhase))]Y\n"
        "  && [exists s:State. move_state(i,s)]false)",
        ("i",),
    ),
    "responsiveness": (
        "nu X. [true]X &&\n"
        "  [comm_command(i,i_c,c)](mu Y.\n"
        "    <true>true && [!comm_state(i_c,i,c2s(c))]Y)",
        ("i", "i_c", "c"),
    ),
    "responsiveness-weakened": (
        "nu X. [true]X &&\n"
        "  [comm_command(i,i_c,c)](mu Y. <true>true &&\n"
        "    [!(comm_state(i_c,i,c2s(c)) ||\n"
        "       exists c':Command. comm_command(i,i_c,c'))]Y)",
        ("i", "i_c", "c"),
    ),
    "progress": (
        "nu X. [true]X &&\n"
        "  mu Y. <exists s:State. move_state(i,s)>true ||\n"
        "    (<true>true && [true]Y)",
        ("i",),
    ),
    "progress-weakened": (
        "nu X. [true]X &&\n"
        "  mu Y. <exists s:State. move_state(i,s)>true || <true>Y",
        ("i",),
    ),
}

C2S_NOTE = "% c2s(c) is the state named like command c, e.g. c2s(ON) = ON"


class MissingParameter(KeyError):
    def __str__(self) -> str:
        return f"property template needs parameter {self.args[0]!r}"


def emit_property(template: str, params: Mapping[str, object] | None = None) -> str:
    if template not in TEMPLATES:
        raise KeyError(f"unknown property template {template!r}")
    text, needed = TEMPLATES[template]
    params = dict(params or {})
    for name in needed:
        if name not in params:
            raise MissingParameter(name)
    # Longest names first so i_c is not clobbered by i.
    for name in sorted(needed, key=len, reverse=True):
        value = params[name]
        value = mangle(value) if isinstance(value, str) else str(value)
        text = re.sub(rf"(?<![\w']){re.escape(name)}(?![\w'])", value, text)
    if "c2s" in text:
        text = C2S_NOTE + "\n" + text
    return text + "\n"
