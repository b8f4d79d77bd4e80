"""Shared test helpers: fixture paths and a random SML class generator."""

from __future__ import annotations

import random
from pathlib import Path

from smlcheck.parser import parse, parse_file

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def load(name: str):
    """First class of a fixture file."""
    return parse_file(FIXTURES / name)[0]


def load_all(name: str) -> dict:
    return {c.name: c for c in parse_file(FIXTURES / name)}


COOLING_ALPHABET = ("OK", "ERROR", "NO_CONNECTION")


def _guard(rng: random.Random, children: dict[str, list[str]], depth: int = 0) -> str:
    if depth < 2 and rng.random() < 0.35:
        op = rng.choice(["and", "or"])
        return f"( {_guard(rng, children, depth + 1)} {op} {_guard(rng, children, depth + 1)} )"
    sel = rng.choice([*children, "FwCHILDREN"])
    if sel == "FwCHILDREN":
        pool = sorted({s for states in children.values() for s in states})
    else:
        pool = children[sel]
    picked = rng.sample(pool, rng.randint(1, min(2, len(pool))))
    rhs = picked[0] if len(picked) == 1 else "{" + ",".join(picked) + "}"
    q = rng.choice(["ANY", "ALL"])
    return f"( ${q}${sel} in_state {rhs} )"


def random_class(rng: random.Random, name: str = "R"):
    """A class with at most 5 states, 1-2 child classes of at most 4 states
    and at most 4 move_to when clauses per state. Returns (ClassDef, registry)."""
    n_children = rng.randint(1, 2)
    children = {}
    for t in range(n_children):
        k = rng.randint(1, 4)
        children[f"C{t}"] = [f"S{t}_{j}" for j in range(k)]
    # Share a state name across child classes now and then, so FwCHILDREN
    # guards can mix classes.
    if n_children == 2 and rng.random() < 0.5:
        children["C1"][0] = children["C0"][0]
    states = [f"P{i}" for i in range(rng.randint(1, 5))]
    lines = [f"class: {name}"]
    for s in states:
        lines.append(f"  state: {s}")
        for _ in range(rng.randint(0, 4)):
            lines.append(f"    when {_guard(rng, children)} move_to {rng.choice(states)}")
    cls = parse("\n".join(lines) + "\n")
    registry = {t: tuple(v) for t, v in children.items()}
    # Used when the class only ever quantifies over FwCHILDREN.
    registry["FwCHILDREN"] = tuple(dict.fromkeys(s for v in children.values() for s in v))
    return cls, registry


def corpus(n: int, seed: int = 2024):
    rng = random.Random(seed)
    return [random_class(rng, f"R{i}") for i in range(n)]
