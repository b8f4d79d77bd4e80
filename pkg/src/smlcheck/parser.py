"""Lexer and recursive-descent parser for the core of SML.

Grammar (whitespace is insignificant)::

    file      := class+
    class     := 'class' ':' NAME state*
    state     := 'state' ':' NAME (when | action)*
    when      := 'when' guard referer
    referer   := 'move_to' NAME | 'do' NAME
    action    := 'action' ':' NAME stmt+
    stmt      := 'do' NAME PATTERN
               | 'move_to' NAME
               | 'if' guard 'then' stmt* ['else' stmt*] 'endif'
    guard     := conj ('or' conj)*
    conj      := primary ('and' primary)*
    primary   := '(' guard ')' | PATTERN 'in_state' states
    states    := NAME | '{' NAME (',' NAME)* '}'
    PATTERN   := '$ANY$' NAME | '$ALL$' NAME
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    ActionClause,
    And,
    Atom,
    ChildPattern,
    ClassDef,
    Do,
    DoAction,
    Guard,
    If,
    MoveTo,
    Or,
    Pos,
    Referer,
    StateClause,
    Statement,
    WhenClause,
)

KEYWORDS = frozenset(
    "class state action when do move_to if then else endif and or in_state".split()
)
# Keywords that open a new clause; they terminate statement lists.
_CLAUSE_STARTS = frozenset({"class", "state", "action", "when"})


class ParseError(Exception):
    def __init__(self, message: str, pos: Pos, filename: str | None = None):
        self.message = message
        self.pos = pos
        self.filename = filename
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.filename}:" if self.filename else ""
        return f"{where}{self.pos.line}:{self.pos.col}: error: {self.message}"


@dataclass(frozen=True)
class Token:
    kind: str  # NAME, PATTERN, KW, PUNCT, EOF
    text: str
    pos: Pos


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#.*)
  | (?P<pattern>\$(?:ANY|ALL)\$[A-Za-z0-9_$]+)
  | (?P<name>[A-Za-z0-9_$][A-Za-z0-9_$]*)
  | (?P<punct>[(){},:])
    """,
    re.VERBOSE,
)


def tokenize(source: str, filename: str | None = None) -> list[Token]:
    tokens = []
    line, line_start = 1, 0
    i = 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise ParseError(
                f"unexpected character {source[i]!r}", Pos(line, i - line_start + 1), filename
            )
        kind = m.lastgroup
        text = m.group()
        pos = Pos(line, i - line_start + 1)
        if kind == "pattern":
            tokens.append(Token("PATTERN", text, pos))
        elif kind == "name":
            tokens.append(Token("KW" if text in KEYWORDS else "NAME", text, pos))
        elif kind == "punct":
            tokens.append(Token("PUNCT", text, pos))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = i + text.rindex("\n") + 1
        i = m.end()
    tokens.append(Token("EOF", "", Pos(line, i - line_start + 1)))
    return tokens


class _Parser:
    def __init__(self, source: str, filename: str | None):
        self.filename = filename
        self.toks = tokenize(source, filename)
        self.i = 0

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        return ParseError(message, (tok or self.tok).pos, self.filename)

    def at_kw(self, *words: str) -> bool:
        return self.tok.kind == "KW" and self.tok.text in words

    def at_punct(self, p: str) -> bool:
        return self.tok.kind == "PUNCT" and self.tok.text == p

    def expect_punct(self, p: str) -> Token:
        if not self.at_punct(p):
            raise self.error(f"expected {p!r}, found {self._describe()}")
        return self.advance()

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            raise self.error(f"expected {word!r}, found {self._describe()}")
        return self.advance()

    def expect_name(self, what: str) -> Token:
        if self.tok.kind != "NAME":
            raise self.error(f"missing {what}, found {self._describe()}")
        return self.advance()

    def _describe(self) -> str:
        t = self.tok
        return "end of input" if t.kind == "EOF" else repr(t.text)

    def header(self, word: str) -> tuple[Token, Token]:
        kw = self.expect_kw(word)
        self.expect_punct(":")
        return kw, self.expect_name(f"{word} name")

    # -- grammar ------------------------------------------------------------

    def classes(self) -> list[ClassDef]:
        out = []
        while self.tok.kind != "EOF":
            if not self.at_kw("class"):
                raise self._unknown("'class:'")
            out.append(self.class_def())
        if not out:
            raise self.error("no class definition found")
        return out

    def _unknown(self, expected: str) -> ParseError:
        t = self.tok
        if t.kind == "NAME":
            return self.error(f"unknown keyword {t.text!r} (expected {expected})")
        return self.error(f"expected {expected}, found {self._describe()}")

    def class_def(self) -> ClassDef:
        kw, name = self.header("class")
        states = []
        seen: dict[str, Pos] = {}
        while self.at_kw("state"):
            st = self.state_clause()
            if st.name in seen:
                raise ParseError(
                    f"duplicate state {st.name!r} (first declared at {seen[st.name]})",
                    st.pos,
                    self.filename,
                )
            seen[st.name] = st.pos
            states.append(st)
        if self.tok.kind != "EOF" and not self.at_kw("class"):
            raise self._unknown("'state:', 'when', 'action:' or 'class:'")
        if not states:
            raise ParseError(f"class {name.text!r} has no state clause", kw.pos, self.filename)
        return ClassDef(name.text, tuple(states), pos=kw.pos)

    def state_clause(self) -> StateClause:
        kw, name = self.header("state")
        whens: list[WhenClause] = []
        actions: list[ActionClause] = []
        while True:
            if self.at_kw("when"):
                whens.append(self.when_clause())
            elif self.at_kw("action"):
                act = self.action_clause()
                if any(a.name == act.name for a in actions):
                    raise ParseError(
                        f"duplicate action {act.name!r} in state {name.text!r}",
                        act.pos,
                        self.filename,
                    )
                actions.append(act)
            else:
                break
        return StateClause(name.text, tuple(whens), tuple(actions), pos=kw.pos)

    def when_clause(self) -> WhenClause:
        kw = self.expect_kw("when")
        guard = self.guard()
        return WhenClause(guard, self.referer(), pos=kw.pos)

    def referer(self) -> Referer:
        t = self.tok
        if self.at_kw("move_to"):
            self.advance()
            return MoveTo(self.expect_name("state after move_to").text, pos=t.pos)
        if self.at_kw("do"):
            self.advance()
            return DoAction(self.expect_name("action name after do").text, pos=t.pos)
        raise self._unknown("'move_to' or 'do' after when guard")

    def action_clause(self) -> ActionClause:
        kw, name = self.header("action")
        body = self.statements()
        if not body:
            raise ParseError(f"action {name.text!r} has an empty body", kw.pos, self.filename)
        if self.at_kw("else", "endif"):
            raise self.error(f"{self.tok.text!r} without matching 'if'")
        return ActionClause(name.text, body, pos=kw.pos)

    def statements(self) -> tuple[Statement, ...]:
        out = []
        while True:
            t = self.tok
            if t.kind == "EOF" or self.at_kw("else", "endif") or (
                t.kind == "KW" and t.text in _CLAUSE_STARTS
            ):
                return tuple(out)
            out.append(self.statement())

    def statement(self) -> Statement:
        t = self.tok
        if self.at_kw("do"):
            self.advance()
            cmd = self.expect_name("command after do")
            pat = self.pattern()
            if pat.quantifier != "ALL":
                raise ParseError("do statements require an $ALL$ child pattern", pat.pos, self.filename)
            return Do(cmd.text, pat, pos=t.pos)
        if self.at_kw("move_to"):
            self.advance()
            return MoveTo(self.expect_name("state after move_to").text, pos=t.pos)
        if self.at_kw("if"):
            return self.if_statement()
        raise self._unknown("a statement ('do', 'move_to' or 'if')")

    def if_statement(self) -> If:
        kw = self.expect_kw("if")
        guard = self.guard()
        self.expect_kw("then")
        then = self.statements()
        orelse: tuple[Statement, ...] = ()
        if self.at_kw("else"):
            self.advance()
            orelse = self.statements()
        if not self.at_kw("endif"):
            raise ParseError(
                f"unbalanced if: missing 'endif' for 'if' opened here (found {self._describe()})",
                kw.pos,
                self.filename,
            )
        self.advance()
        return If(guard, then, orelse, pos=kw.pos)

    def guard(self) -> Guard:
        left = self.conj()
        while self.at_kw("or"):
            t = self.advance()
            left = Or(left, self.conj(), pos=t.pos)
        return left

    def conj(self) -> Guard:
        left = self.primary()
        while self.at_kw("and"):
            t = self.advance()
            left = And(left, self.primary(), pos=t.pos)
        return left

    def primary(self) -> Guard:
        if self.at_punct("("):
            self.advance()
            g = self.guard()
            self.expect_punct(")")
            return g
        pat = self.pattern()
        self.expect_kw("in_state")
        names = self.state_set()
        return Atom(pat, frozenset(names), order=tuple(names), pos=pat.pos)

    def pattern(self) -> ChildPattern:
        t = self.tok
        if t.kind != "PATTERN":
            raise self.error(f"expected a child pattern ($ANY$/$ALL$), found {self._describe()}")
        self.advance()
        quant, sel = t.text[1:4], t.text[5:]
        return ChildPattern(quant, sel, pos=t.pos)

    def state_set(self) -> list[str]:
        if not self.at_punct("{"):
            return [self.expect_name("state name after in_state").text]
        self.advance()
        names = [self.expect_name("state name").text]
        while self.at_punct(","):
            self.advance()
            names.append(self.expect_name("state name").text)
        self.expect_punct("}")
        return names


def parse_all(source: str, filename: str | None = None) -> list[ClassDef]:
    """Parse every class in ``source``; each ``class:`` header starts a new one."""
    return _Parser(source, filename).classes()


def parse(source: str, filename: str | None = None) -> ClassDef:
    """Parse a source text holding exactly one class."""
    classes = parse_all(source, filename)
    if len(classes) != 1:
        raise ParseError(
            f"expected exactly one class, found {len(classes)}", classes[1].pos, filename
        )
    return classes[0]


def parse_file(path) -> list[ClassDef]:
    with open(path, encoding="utf-8") as f:
        return parse_all(f.read(), str(path))
