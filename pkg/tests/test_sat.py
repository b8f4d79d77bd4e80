import io
import itertools
import sys

import pytest
from hypothesis import given, settings, strategies as st

from smlcheck.sat import (
    Solver,
    parse_solver_output,
    read_dimacs,
    solve_clauses,
    solve_external,
    write_dimacs,
)


def brute_force(nvars, clauses):
    for bits in itertools.product([False, True], repeat=nvars):
        if all(any(bits[abs(l) - 1] == (l > 0) for l in c) for c in clauses):
            return True
    return False


def satisfies(model, clauses):
    return all(any(model[abs(l)] == (l > 0) for l in c) for c in clauses)


def test_contradiction():
    assert solve_clauses(1, [[1], [-1]]) is None


def test_simple_sat():
    m = solve_clauses(2, [[1, 2], [-1]])
    assert m == {1: False, 2: True}


def test_empty_clause_is_unsat():
    assert solve_clauses(1, [[]]) is None


def test_assumptions_are_retractable():
    s = Solver(2)
    s.add_clause([1, 2])
    assert not s.solve([-1, -2])
    assert s.solve([-1])
    assert s.model()[2]


def test_pigeonhole_unsat():
    # 4 pigeons, 3 holes.
    p = lambda i, j: i * 3 + j + 1
    clauses = [[p(i, j) for j in range(3)] for i in range(4)]
    for j in range(3):
        for a, b in itertools.combinations(range(4), 2):
            clauses.append([-p(a, j), -p(b, j)])
    assert solve_clauses(12, clauses) is None


cnf = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(
            st.lists(st.integers(1, n).flatmap(lambda v: st.sampled_from([v, -v])), min_size=1, max_size=4),
            max_size=40,
        ),
    )
)


@settings(max_examples=400, deadline=None)
@given(cnf)
def test_matches_brute_force(problem):
    n, clauses = problem
    m = solve_clauses(n, clauses)
    assert (m is not None) == brute_force(n, clauses)
    if m is not None:
        assert satisfies(m, clauses)


@settings(max_examples=100, deadline=None)
@given(cnf)
def test_dimacs_round_trip(problem):
    n, clauses = problem
    buf = io.StringIO()
    write_dimacs(n, clauses, buf, comments=["round trip"])
    text = buf.getvalue()
    assert text.startswith("c round trip\n")
    assert f"p cnf {n} {len(clauses)}" in text
    assert read_dimacs(text) == (n, clauses)


def test_bad_header():
    with pytest.raises(ValueError):
        read_dimacs("p dnf 1 1\n1 0\n")


def test_parse_solver_output():
    assert parse_solver_output("c hi\ns SATISFIABLE\nv 1 -2\nv 3 0\n") == {1: True, 2: False, 3: True}
    assert parse_solver_output("s UNSATISFIABLE\n") is None
    with pytest.raises(RuntimeError):
        parse_solver_output("garbage")


FAKE_SOLVER = """
import sys
from smlcheck.sat import read_dimacs, solve_clauses
n, cls = read_dimacs(open(sys.argv[1]).read())
m = solve_clauses(n, cls)
if m is None:
    print("s UNSATISFIABLE")
else:
    print("s SATISFIABLE")
    print("v " + " ".join(str(v if m[v] else -v) for v in sorted(m)) + " 0")
"""


@pytest.fixture
def fake_solver(tmp_path):
    script = tmp_path / "solver.py"
    script.write_text(FAKE_SOLVER)
    return [sys.executable, str(script)]


def test_external_solver(fake_solver):
    assert solve_external(fake_solver, 2, [[1, 2], [-1]]) == {1: False, 2: True}
    assert solve_external(fake_solver, 1, [[1], [-1]]) is None


def test_external_solver_missing():
    with pytest.raises(RuntimeError):
        solve_external(["/nonexistent/solver"], 1, [[1]])
