"""State-change graphs, strongly connected components and DOT rendering.

There is an edge ``s -> t`` when some child configuration makes
``move_to t`` the topmost enabled when clause of ``s``. More than one SCC
means some states cannot be left or cannot be re-entered.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import loop_sat
from .frontend import ordered_states
from .kripke import DEFAULT_CAP, GraphTooLarge, Layout
from .semantics import Fire, topmost
from .syntax import ClassDef, MoveTo

DISCLAIMER = (
    "Reachability here is an under-approximation of all errors that can potentially exist: "
    "the actual reachability dynamically depends on the configuration of the children."
)


@dataclass
class StateChangeGraph:
    cls: str
    vertices: list[str]
    # (source, target) -> child states (one per layout slot) enabling the move
    edges: dict[tuple[str, str], tuple[str, ...]]
    layout: Layout

    def successors(self, v: str) -> list[str]:
        return [t for (s, t) in self.edges if s == v]


def build_state_change_graph(
    cls: ClassDef, layout: Layout, method: str = "enum", cap: int = DEFAULT_CAP
) -> StateChangeGraph:
    """``method`` is ``enum`` (walk canonical configurations) or ``sat`` (one
    query per ordered pair of states)."""
    vertices = ordered_states(cls)
    edges: dict[tuple[str, str], tuple[str, ...]] = {}
    if method == "enum":
        size = layout.size(canonical=True)
        if size > cap:
            raise GraphTooLarge(size, cap)
        for cfg in layout.configurations(canonical=True):
            chs = layout.children(cfg)
            for s in vertices:
                r = topmost(cls, s, chs)
                if isinstance(r, Fire) and isinstance(r.referer, MoveTo):
                    edges.setdefault((s, r.referer.state), cfg)
    elif method == "sat":
        for s in vertices:
            for t in vertices:
                w = loop_sat.edge_witness(cls, layout, s, t)
                if w is not None:
                    edges[s, t] = w
    else:
        raise ValueError(f"unknown method {method!r}")
    # Keep edges in vertex order so reports do not depend on the method.
    order = {v: i for i, v in enumerate(vertices)}
    edges = dict(sorted(edges.items(), key=lambda e: (order[e[0][0]], order[e[0][1]])))
    return StateChangeGraph(cls.name, vertices, edges, layout)


def check_witness(cls: ClassDef, graph: StateChangeGraph, edge: tuple[str, str]) -> bool:
    r = topmost(cls, edge[0], graph.layout.children(graph.edges[edge]))
    return isinstance(r, Fire) and isinstance(r.referer, MoveTo) and r.referer.state == edge[1]


def tarjan(vertices: list[str], succ: dict[str, list[str]]) -> list[list[str]]:
    """SCCs in reverse topological order (iterative Tarjan)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0
    for root in vertices:
        if root in index:
            continue
        work = [(root, iter(succ.get(root, ())))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ.get(w, ()))))
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    low[u] = min(low[u], low[v])
                if low[v] == index[v]:
                    comp = []
                    while True:
                        w = stack.pop()
                        on_stack.discard(w)
                        comp.append(w)
                        if w == v:
                            break
                    out.append(comp)
    return out


@dataclass
class Component:
    states: list[str]
    trap: bool  # no edge leaves the component
    source: bool  # no edge enters the component

    @property
    def kind(self) -> str:
        if self.trap and self.source:
            return "isolated"
        if self.trap:
            return "trap"
        if self.source:
            return "source"
        return "internal"


@dataclass
class SccReport:
    components: list[Component]
    diagnostics: list[str] = field(default_factory=list)
    disclaimer: str = DISCLAIMER

    @property
    def violation(self) -> bool:
        return len(self.components) > 1

    def component_of(self, state: str) -> int:
        return next(i for i, c in enumerate(self.components) if state in c.states)


def scc(graph: StateChangeGraph) -> SccReport:
    succ: dict[str, list[str]] = {v: [] for v in graph.vertices}
    for s, t in graph.edges:
        succ[s].append(t)
    order = {v: i for i, v in enumerate(graph.vertices)}
    comps = [sorted(c, key=order.__getitem__) for c in tarjan(graph.vertices, succ)]
    comps.sort(key=lambda c: order[c[0]])
    where = {v: i for i, c in enumerate(comps) for v in c}
    leaves = {where[s] for s, t in graph.edges if where[s] != where[t]}
    enters = {where[t] for s, t in graph.edges if where[s] != where[t]}
    components = [Component(c, i not in leaves, i not in enters) for i, c in enumerate(comps)]
    diags = []
    if len(components) > 1:
        diags.append(
            f"{graph.cls}: {len(components)} strongly connected components; "
            "some states cannot be reached back from others"
        )
        for c in components:
            names = ", ".join(c.states)
            if c.source:
                diags.append(f"{{{names}}} cannot be reached from any other state")
            if c.trap:
                diags.append(f"{{{names}}} cannot be left once entered")
    return SccReport(components, diags)


def _dot_id(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_dot(graph: StateChangeGraph, report: SccReport) -> str:
    lines = [f"digraph {_dot_id(graph.cls)} {{", "    node [shape=ellipse];"]
    for i, comp in enumerate(report.components):
        lines.append(f"    subgraph cluster_{i} {{")
        lines.append(f'        label="{comp.kind}"; style=dashed;')
        for v in comp.states:
            lines.append(f"        {_dot_id(v)};")
        lines.append("    }")
    done = set()
    for s, t in graph.edges:
        if (s, t) in done:
            continue
        if s == t:
            lines.append(f"    {_dot_id(s)} -> {_dot_id(t)} [style=solid];")
        elif (t, s) in graph.edges:
            lines.append(f"    {_dot_id(s)} -> {_dot_id(t)} [dir=both, style=solid];")
            done.add((t, s))
        else:
            lines.append(f"    {_dot_id(s)} -> {_dot_id(t)} [style=dashed];")
        done.add((s, t))
    lines.append("}")
    return "\n".join(lines) + "\n"
