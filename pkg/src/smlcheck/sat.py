"""A small CDCL SAT solver and DIMACS helpers.

Literals are non-zero ints in DIMACS convention. The solver uses two watched
literals, first-UIP clause learning, VSIDS-style activities with phase saving,
and Luby restarts. It is sized for the formulas produced by the loop encoder
(a few thousand variables), not for industrial instances.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from typing import Iterable, Sequence, TextIO


class Solver:
    def __init__(self, nvars: int = 0):
        self.nvars = 0
        self.clauses: list[list[int]] = []
        self.watches: dict[int, list[int]] = {}
        self.assigns = [0]
        self.level = [0]
        self.reason: list[int | None] = [None]
        self.activity = [0.0]
        self.saved = [False]
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.qhead = 0
        self.var_inc = 1.0
        self.ok = True
        self.conflicts = 0
        self.decisions = 0
        self.ensure_vars(nvars)

    def ensure_vars(self, n: int) -> None:
        while self.nvars < n:
            self.nvars += 1
            self.assigns.append(0)
            self.level.append(0)
            self.reason.append(None)
            self.activity.append(0.0)
            self.saved.append(False)
            self.watches[self.nvars] = []
            self.watches[-self.nvars] = []

    def _value(self, lit: int) -> int:
        v = self.assigns[abs(lit)]
        return v if lit > 0 else -v

    def add_clause(self, lits: Iterable[int]) -> bool:
        """Add a clause at decision level 0. Returns False once the formula is
        known to be unsatisfiable."""
        if not self.ok:
            return False
        self._cancel_until(0)
        seen = set()
        clause = []
        for lit in lits:
            if lit == 0:
                raise ValueError("literal 0 is not allowed")
            self.ensure_vars(abs(lit))
            if -lit in seen:
                return True  # tautology
            if lit in seen:
                continue
            val = self._value(lit)
            if val > 0:
                return True
            if val < 0:
                continue
            seen.add(lit)
            clause.append(lit)
        if not clause:
            self.ok = False
            return False
        if len(clause) == 1:
            self._enqueue(clause[0], None)
            if self._propagate() is not None:
                self.ok = False
            return self.ok
        self._attach(clause)
        return True

    def _attach(self, clause: list[int]) -> int:
        idx = len(self.clauses)
        self.clauses.append(clause)
        self.watches[-clause[0]].append(idx)
        self.watches[-clause[1]].append(idx)
        return idx

    def _enqueue(self, lit: int, reason: int | None) -> None:
        var = abs(lit)
        self.assigns[var] = 1 if lit > 0 else -1
        self.level[var] = len(self.trail_lim)
        self.reason[var] = reason
        self.trail.append(lit)

    def _propagate(self) -> int | None:
        """Unit propagation; returns the index of a conflicting clause or None."""
        clauses, watches, assigns = self.clauses, self.watches, self.assigns
        while self.qhead < len(self.trail):
            p = self.trail[self.qhead]
            self.qhead += 1
            # Clauses watching -p: watches are keyed by the literal whose truth
            # falsifies the watched literal.
            ws = watches[p]
            i = j = 0
            n = len(ws)
            false_lit = -p
            while i < n:
                ci = ws[i]
                i += 1
                c = clauses[ci]
                if c[0] == false_lit:
                    c[0], c[1] = c[1], c[0]
                first = c[0]
                fv = assigns[abs(first)]
                if (fv if first > 0 else -fv) > 0:
                    ws[j] = ci
                    j += 1
                    continue
                for k in range(2, len(c)):
                    lit = c[k]
                    lv = assigns[abs(lit)]
                    if (lv if lit > 0 else -lv) >= 0:
                        c[1], c[k] = lit, false_lit
                        watches[-lit].append(ci)
                        break
                else:
                    ws[j] = ci
                    j += 1
                    if (fv if first > 0 else -fv) < 0:
                        while i < n:
                            ws[j] = ws[i]
                            j += 1
                            i += 1
                        del ws[j:]
                        self.qhead = len(self.trail)
                        return ci
                    self._enqueue(first, ci)
            del ws[j:]
        return None

    def _analyze(self, confl: int) -> tuple[list[int], int]:
        seen = set()
        learnt = [0]
        counter = 0
        p = 0
        idx = len(self.trail) - 1
        cur = len(self.trail_lim)
        while True:
            for q in self.clauses[confl]:
                if p and q == p:
                    continue
                v = abs(q)
                if v in seen or self.level[v] == 0:
                    continue
                seen.add(v)
                self._bump(v)
                if self.level[v] >= cur:
                    counter += 1
                else:
                    learnt.append(q)
            while abs(self.trail[idx]) not in seen:
                idx -= 1
            p = self.trail[idx]
            idx -= 1
            counter -= 1
            if counter == 0:
                break
            confl = self.reason[abs(p)]
        learnt[0] = -p
        if len(learnt) == 1:
            return learnt, 0
        best = max(range(1, len(learnt)), key=lambda i: self.level[abs(learnt[i])])
        learnt[1], learnt[best] = learnt[best], learnt[1]
        return learnt, self.level[abs(learnt[1])]

    def _bump(self, v: int) -> None:
        self.activity[v] += self.var_inc
        if self.activity[v] > 1e100:
            for i in range(1, self.nvars + 1):
                self.activity[i] *= 1e-100
            self.var_inc *= 1e-100

    def _cancel_until(self, level: int) -> None:
        if len(self.trail_lim) <= level:
            return
        stop = self.trail_lim[level]
        for lit in self.trail[stop:]:
            v = abs(lit)
            self.saved[v] = lit > 0
            self.assigns[v] = 0
            self.reason[v] = None
        del self.trail[stop:]
        del self.trail_lim[level:]
        self.qhead = len(self.trail)

    def _pick(self) -> int:
        best, best_act = 0, -1.0
        assigns, activity = self.assigns, self.activity
        for v in range(1, self.nvars + 1):
            if assigns[v] == 0 and activity[v] > best_act:
                best, best_act = v, activity[v]
        if best == 0:
            return 0
        return best if self.saved[best] else -best

    def solve(self, assumptions: Sequence[int] = ()) -> bool:
        if not self.ok:
            return False
        self._cancel_until(0)
        if self._propagate() is not None:
            self.ok = False
            return False
        for a in assumptions:
            self.ensure_vars(abs(a))
        restart = 1
        budget = 100 * _luby(restart)
        while True:
            confl = self._propagate()
            if confl is not None:
                self.conflicts += 1
                budget -= 1
                if not self.trail_lim:
                    self.ok = False
                    return False
                learnt, back = self._analyze(confl)
                self._cancel_until(back)
                if len(learnt) == 1:
                    self._enqueue(learnt[0], None)
                else:
                    self._enqueue(learnt[0], self._attach(learnt))
                self.var_inc *= 1.05
                continue
            if budget <= 0:
                restart += 1
                budget = 100 * _luby(restart)
                self._cancel_until(0)
                continue
            # Assumptions occupy the first decision levels.
            lvl = len(self.trail_lim)
            if lvl < len(assumptions):
                a = assumptions[lvl]
                val = self._value(a)
                if val < 0:
                    self._cancel_until(0)
                    return False
                self.trail_lim.append(len(self.trail))
                if val == 0:
                    self._enqueue(a, None)
                continue
            lit = self._pick()
            if lit == 0:
                return True
            self.decisions += 1
            self.trail_lim.append(len(self.trail))
            self._enqueue(lit, None)

    def model(self) -> dict[int, bool]:
        return {v: self.assigns[v] > 0 for v in range(1, self.nvars + 1)}


def _luby(i: int) -> int:
    k = 1
    while (1 << k) - 1 < i:
        k += 1
    while i != (1 << k) - 1:
        i -= (1 << (k - 1)) - 1
        k = 1
        while (1 << k) - 1 < i:
            k += 1
    return 1 << (k - 1)


def solve_clauses(nvars: int, clauses: Iterable[Sequence[int]]) -> dict[int, bool] | None:
    """Model of the clause set, or None if unsatisfiable."""
    s = Solver(nvars)
    for c in clauses:
        if not s.add_clause(c):
            return None
    if not s.solve():
        return None
    return s.model()


# -- DIMACS ---------------------------------------------------------------------


def write_dimacs(nvars: int, clauses: Sequence[Sequence[int]], out: TextIO, comments=()) -> None:
    for line in comments:
        out.write(f"c {line}\n")
    out.write(f"p cnf {nvars} {len(clauses)}\n")
    for c in clauses:
        out.write(" ".join(map(str, c)) + " 0\n")


def read_dimacs(text: str) -> tuple[int, list[list[int]]]:
    nvars = 0
    clauses: list[list[int]] = []
    cur: list[int] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line[0] in "c%":
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ValueError(f"bad DIMACS header: {line!r}")
            nvars = int(parts[2])
            continue
        for tok in line.split():
            lit = int(tok)
            if lit == 0:
                clauses.append(cur)
                cur = []
            else:
                cur.append(lit)
    if cur:
        clauses.append(cur)
    return nvars, clauses


def parse_solver_output(text: str) -> dict[int, bool] | None:
    """Read a SAT-competition style answer (``s``/``v`` lines)."""
    status = None
    model: dict[int, bool] = {}
    for line in text.splitlines():
        if line.startswith("s "):
            status = line[2:].strip()
        elif line.startswith("v "):
            for tok in line[2:].split():
                lit = int(tok)
                if lit:
                    model[abs(lit)] = lit > 0
    if status == "UNSATISFIABLE":
        return None
    if status != "SATISFIABLE":
        raise RuntimeError(f"external solver gave no verdict (status line: {status!r})")
    return model


def solve_external(
    command: Sequence[str], nvars: int, clauses: Sequence[Sequence[int]], timeout: float | None = None
) -> dict[int, bool] | None:
    """Run an external DIMACS solver; the CNF file path is appended to ``command``."""
    fd, path = tempfile.mkstemp(suffix=".cnf")
    try:
        with os.fdopen(fd, "w") as f:
            write_dimacs(nvars, clauses, f)
        try:
            proc = subprocess.run(
                [*command, path], capture_output=True, text=True, timeout=timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise RuntimeError(f"external solver failed: {e}") from e
        model = parse_solver_output(proc.stdout)
        if model is not None:
            for v in range(1, nvars + 1):
                model.setdefault(v, False)
        return model
    finally:
        os.unlink(path)
