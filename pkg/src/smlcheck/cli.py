"""Command-line interface: ``smlcheck check|loops|reach|sim|export-mcrl2``.

Exit codes: 0 when nothing was found, 1 when the report has findings
(loops, SCC violations, livelock, deadlock), 2 for usage or input errors.
Validation results are reported as warnings and never change the exit code.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, TextIO

from . import __version__
from .frontend import validate
from .hierarchy import ConfigError, Outcome, load_config, read_script, repl, run, write_trace
from .kripke import GraphTooLarge, Layout, UnknownAlphabet, child_alphabets, infer_alphabet
from .loop_sat import find_move_to_loops
from .mcrl2 import TEMPLATES, emit_property, export_classes, export_system
from .parser import ParseError, parse_file
from .reach import build_state_change_graph, emit_dot, scc
from .syntax import FWCHILDREN, ClassDef

EXIT_CLEAN, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2

DO_REFERER_CAVEAT = (
    "the class has do referers in when clauses; a topmost enabled do referer ends the "
    "move_to search, so loops passing through actions are not covered"
)


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- reports --------------------------------------------------------------------


@dataclass
class Finding:
    kind: str  # loop, scc, livelock or deadlock
    message: str
    data: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message, "data": self.data}


@dataclass
class ClassReport:
    name: str
    file: str
    findings: list[Finding] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    caveats: list[str] = field(default_factory=list)
    timings_ms: dict[str, float] = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "file": self.file,
            "findings": [f.to_json() for f in self.findings],
            "warnings": self.warnings,
            "caveats": self.caveats,
            "timings_ms": self.timings_ms,
            "details": self.details,
        }


@dataclass
class Report:
    command: str
    inputs: list[dict]
    classes: list[ClassReport] = field(default_factory=list)
    simulation: dict | None = None
    findings: list[Finding] = field(default_factory=list)  # not tied to a class
    notes: list[str] = field(default_factory=list)

    def all_findings(self) -> list[Finding]:
        return [f for c in self.classes for f in c.findings] + self.findings

    @property
    def exit_code(self) -> int:
        return EXIT_FINDINGS if self.all_findings() else EXIT_CLEAN

    def to_json(self) -> dict:
        doc = {
            "tool": "smlcheck",
            "version": __version__,
            "command": self.command,
            "inputs": self.inputs,
            "classes": [c.to_json() for c in self.classes],
            "findings": [f.to_json() for f in self.findings],
            "notes": self.notes,
            "exit_code": self.exit_code,
        }
        if self.simulation is not None:
            doc["simulation"] = self.simulation
        return doc

    def to_text(self) -> str:
        lines = [f"smlcheck {__version__} {self.command}"]
        lines += [f"note: {n}" for n in self.notes]
        for c in self.classes:
            lines.append(f"class {c.name} ({c.file})")
            lines += [f"  warning: {w}" for w in c.warnings]
            lines += [f"  caveat: {w}" for w in c.caveats]
            for f in c.findings:
                lines.append(f"  {f.kind}: {f.message}")
            if not c.findings:
                lines.append("  no findings")
            if c.timings_ms:
                lines.append(
                    "  time: " + ", ".join(f"{k} {v:.1f} ms" for k, v in c.timings_ms.items())
                )
        for f in self.findings:
            lines.append(f"{f.kind}: {f.message}")
        if self.simulation is not None:
            s = self.simulation
            lines.append(f"simulation: {s['outcome']} after {s['steps']} steps")
        return "\n".join(lines) + "\n"


def _digest(path: Path) -> dict:
    data = path.read_bytes()
    return {"file": str(path), "sha256": hashlib.sha256(data).hexdigest()}


def _ms(t0: float) -> float:
    return round((time.perf_counter() - t0) * 1000, 3)


# -- inputs ---------------------------------------------------------------------


def _load(path: str) -> list[ClassDef]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{path}: no such file")
    return parse_file(p)


def _kv(items: Sequence[str], what: str) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"bad {what} {item!r}: expected CLASS=VALUE")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class Context:
    registry: dict
    multiplicities: dict[str, int]


def _context(args) -> Context:
    registry: dict = {}
    libs = list(args.lib or ())
    files = getattr(args, "files", [])
    if not args.no_siblings:
        # Child classes are commonly kept next to their parent class.
        inputs = {Path(f).resolve() for f in files}
        for d in sorted({Path(f).resolve().parent for f in files}):
            libs += [str(p) for p in sorted(d.glob("*.sml")) if p.resolve() not in inputs]
    for lib in libs:
        for c in _load(lib):
            registry.setdefault(c.name, c)
    for k, v in _kv(args.alphabet, "alphabet").items():
        states = [s.strip() for s in v.split(",") if s.strip()]
        if not states:
            raise InputError(f"empty alphabet for {k}")
        registry[k] = states
    mult = {}
    for k, v in _kv(args.multiplicity, "multiplicity").items():
        try:
            mult[k] = int(v)
        except ValueError:
            raise InputError(f"multiplicity of {k} must be an integer, got {v!r}") from None
    return Context(registry, mult)


def _registry_for(cls: ClassDef, ctx: Context, peers: Sequence[ClassDef], rep: ClassReport) -> dict:
    reg = dict(ctx.registry)
    for c in peers:
        reg.setdefault(c.name, c)
    named = sorted(cls.child_classes)
    wanted = named or ([FWCHILDREN] if any(True for _ in cls.patterns()) else [])
    for t in wanted:
        if t not in reg:
            reg[t] = infer_alphabet(cls, t)
            rep.caveats.append(
                f"no definition of child class {t}; assuming states {', '.join(reg[t])}"
            )
    return reg


def _multiplicities(cls: ClassDef, ctx: Context, reg: dict) -> dict[str, int]:
    known = child_alphabets(cls, reg)
    unknown = [t for t in ctx.multiplicities if t not in known]
    if unknown:
        raise InputError(f"{cls.name} has no child class {', '.join(unknown)}")
    return {t: n for t, n in ctx.multiplicities.items()}


# -- subcommands ------------------------------------------------------------------


def _per_class(files: Sequence[str], work: Callable[[ClassDef, str, list[ClassDef]], ClassReport]):
    """Run ``work`` on every class of every file, in parallel, keeping input order."""
    loaded = [(f, _load(f)) for f in files]
    jobs = [(c, f, classes) for f, classes in loaded for c in classes]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(lambda j: work(*j), jobs))


def cmd_check(args) -> Report:
    known = None
    if args.known:
        known = {k.strip() for item in args.known for k in item.split(",") if k.strip()}

    def work(cls: ClassDef, f: str, _peers) -> ClassReport:
        rep = ClassReport(cls.name, f)
        t0 = time.perf_counter()
        # Validation results are warnings: the runtime tolerates them.
        rep.warnings = [str(d) for d in validate(cls, known, f)]
        rep.timings_ms["validate"] = _ms(t0)
        rep.details = {"states": list(cls.state_names)}
        return rep

    report = Report("check", [_digest(Path(f)) for f in args.files])
    report.classes = _per_class(args.files, work)
    return report


def cmd_loops(args) -> Report:
    ctx = _context(args)
    external = args.solver.split() if args.solver else None

    def work(cls: ClassDef, f: str, peers) -> ClassReport:
        rep = ClassReport(cls.name, f)
        rep.warnings = [str(d) for d in validate(cls, None, f)]
        if cls.uses_do_referers:
            rep.caveats.append(DO_REFERER_CAVEAT)
        reg = _registry_for(cls, ctx, peers, rep)
        mult = _multiplicities(cls, ctx, reg)
        t0 = time.perf_counter()
        r = find_move_to_loops(cls, reg, mult, args.bound, args.max_witnesses, external)
        rep.timings_ms["loops"] = _ms(t0)
        rep.details = {
            "bound": r.k,
            "multiplicities": r.layout.multiplicities,
            "variables": r.nvars,
            "clauses": r.nclauses,
            "complete": r.complete,
        }
        if not r.complete:
            rep.caveats.append(f"stopped after {args.max_witnesses} loop classes")
        for w in r.witnesses:
            cycle = " -> ".join(w.cycle)
            tag = "self-loop" if w.is_self_loop else f"loop of length {w.length}"
            core = ", ".join(f"{s} ({t})" for t, s in w.core)
            rep.findings.append(
                Finding(
                    "loop",
                    f"{tag}: {cycle} with children in {core or 'any states'}",
                    {
                        "cycle": list(w.cycle),
                        "loop_class": list(w.loop_class),
                        "self_loop": w.is_self_loop,
                        "clauses": list(w.clauses),
                        "children": [{"class": t, "state": s} for t, s in w.children],
                        "core": [{"class": t, "state": s} for t, s in w.core],
                    },
                )
            )
        if args.dimacs:
            from .loop_sat import encode

            out = Path(args.dimacs)
            if len(peers) > 1 or len(args.files) > 1:
                out = out.with_name(f"{out.stem}.{cls.name.replace('$', '_')}{out.suffix or '.cnf'}")
            formula = encode(cls, r.layout, r.k)
            with out.open("w") as fh:
                formula.to_dimacs(fh)
        return rep

    report = Report("loops", [_digest(Path(f)) for f in args.files])
    report.classes = _per_class(args.files, work)
    return report


def cmd_reach(args) -> Report:
    from .reach import DISCLAIMER

    ctx = _context(args)
    dots = []

    def work(cls: ClassDef, f: str, peers) -> ClassReport:
        rep = ClassReport(cls.name, f)
        rep.warnings = [str(d) for d in validate(cls, None, f)]
        reg = _registry_for(cls, ctx, peers, rep)
        layout = Layout.build(cls, reg, _multiplicities(cls, ctx, reg))
        t0 = time.perf_counter()
        try:
            g = build_state_change_graph(cls, layout, args.method)
        except GraphTooLarge as e:
            rep.caveats.append(f"{e}; edges computed by SAT queries instead")
            g = build_state_change_graph(cls, layout, "sat")
        r = scc(g)
        rep.timings_ms["reach"] = _ms(t0)
        rep.details = {
            "states": g.vertices,
            "edges": [
                {"from": s, "to": t, "witness": list(w)} for (s, t), w in g.edges.items()
            ],
            "components": [{"states": c.states, "kind": c.kind} for c in r.components],
        }
        if r.violation:
            rep.findings.append(
                Finding(
                    "scc",
                    "; ".join(r.diagnostics),
                    {"components": [c.states for c in r.components]},
                )
            )
        dots.append(emit_dot(g, r))
        return rep

    report = Report("reach", [_digest(Path(f)) for f in args.files])
    report.notes.append(DISCLAIMER)
    report.classes = _per_class(args.files, work)
    if args.dot:
        Path(args.dot).write_text("".join(dots))
    return report


def _sim_summary(out: Outcome) -> dict:
    return {
        "outcome": out.status,
        "steps": out.steps,
        "seed": out.seed,
        "detail": out.detail,
        "final": out.config.digest(),
    }


def cmd_sim(args, stdin: TextIO, stdout: TextIO) -> Report:
    ctx = _context(args)
    classes = {k: v for k, v in ctx.registry.items() if isinstance(v, ClassDef)}
    try:
        config = load_config(args.topology, classes)
    except ParseError:
        raise
    except (ConfigError, OSError) as e:
        raise InputError(str(e)) from None
    report = Report("sim", [_digest(Path(args.topology))])
    if args.repl:
        out = repl(config, stdin, stdout, args.max_steps)
    else:
        script = []
        if args.script:
            with open(args.script, encoding="utf-8") as fh:
                script = read_script(fh)
        driver = "script" if args.script else "random"
        trace_file = open(args.trace, "w") if args.trace else None
        try:
            out = run(
                config,
                driver,
                seed=args.seed,
                max_steps=args.max_steps,
                script=script,
                keep_trace=trace_file is not None,
            )
            if trace_file is not None:
                write_trace(out, trace_file)
        finally:
            if trace_file is not None:
                trace_file.close()
    report.simulation = _sim_summary(out)
    if out.status == "livelock":
        cycle = " -> ".join(out.detail["cycle"] + out.detail["cycle"][:1])
        report.findings.append(Finding("livelock", f"node {out.detail['node']} loops: {cycle}", out.detail))
    elif out.status == "deadlock":
        report.findings.append(
            Finding("deadlock", f"deadlock at step {out.steps}; stuck nodes {out.detail['busy']}", out.detail)
        )
    return report


def cmd_export(args, stdout: TextIO) -> Report:
    path = Path(args.input)
    if not path.is_file():
        raise InputError(f"{args.input}: no such file")
    report = Report("export-mcrl2", [_digest(path)])
    if path.suffix == ".json":
        try:
            config = load_config(path)
        except ConfigError as e:
            raise InputError(str(e)) from None
        text = export_system(config)
        root = config.root
        kids = config.children(root)
        default_i, default_ic = root, (kids[0] if kids else root)
    else:
        classes = parse_file(path)
        text = export_classes(classes)
        default_i, default_ic = 1, 2
    if args.output:
        Path(args.output).write_text(text)
        report.notes.append(f"wrote {args.output}")
    elif args.format == "text":
        stdout.write(text)
    else:
        report.notes.append("specification omitted from JSON output; use --output")
    if args.props:
        params = {
            "i": args.i if args.i is not None else default_i,
            "i_c": args.ic if args.ic is not None else default_ic,
            "c": args.command,
        }
        base = Path(args.output).with_suffix("") if args.output else None
        for name in TEMPLATES:
            prop = emit_property(name, params)
            if base is not None:
                target = base.with_name(f"{base.name}.{name}.mcf")
                target.write_text(prop)
                report.notes.append(f"wrote {target}")
            elif args.format == "text":
                stdout.write(f"% property: {name}\n{prop}\n")
    return report


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["text", "json"], default="text")

    analysis = argparse.ArgumentParser(add_help=False)
    analysis.add_argument("--lib", action="append", metavar="FILE", help="SML file defining child classes")
    analysis.add_argument("--alphabet", action="append", metavar="CLASS=S1,S2", help="states of a child class")
    analysis.add_argument("--multiplicity", action="append", metavar="CLASS=N", help="children per class")
    analysis.add_argument(
        "--no-siblings", action="store_true", help="do not read child classes from neighbouring .sml files"
    )

    p = _Parser(prog="smlcheck", description="Analyse State Manager Language FSMs.", parents=[common])
    p.add_argument("--version", action="version", version=f"smlcheck {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", parents=[common], help="parse and validate")
    c.add_argument("files", nargs="+")
    c.add_argument("--known", action="append", metavar="C1,C2", help="known child class names")

    lp = sub.add_parser("loops", parents=[common, analysis], help="find move_to loops")
    lp.add_argument("files", nargs="+")
    lp.add_argument("--bound", type=int, default=None, help="path length (default: number of states)")
    lp.add_argument("--max-witnesses", type=int, default=16)
    lp.add_argument("--dimacs", metavar="OUT", help="write the CNF formula")
    lp.add_argument("--solver", metavar="CMD", help="external DIMACS solver command")

    r = sub.add_parser("reach", parents=[common, analysis], help="state-change graph and SCCs")
    r.add_argument("files", nargs="+")
    r.add_argument("--dot", metavar="OUT")
    r.add_argument("--method", choices=["enum", "sat"], default="enum")

    s = sub.add_parser("sim", parents=[common, analysis], help="simulate a hierarchy")
    s.add_argument("topology")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--script", metavar="FILE")
    mode.add_argument("--repl", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-steps", type=int, default=10_000)
    s.add_argument("--trace", metavar="OUT")

    e = sub.add_parser("export-mcrl2", parents=[common], help="export an mCRL2 specification")
    e.add_argument("input", help=".sml file or .json topology")
    e.add_argument("-o", "--output", metavar="OUT")
    e.add_argument("--props", action="store_true", help="also emit property templates")
    e.add_argument("--i", type=int, default=None, help="FSM id for properties")
    e.add_argument("--ic", type=int, default=None, help="child id for properties")
    e.add_argument("--command", default="ON", help="command for properties")
    return p


def main(argv: Sequence[str] | None = None, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        if args.command == "check":
            report = cmd_check(args)
        elif args.command == "loops":
            if args.bound is not None and args.bound < 1:
                raise InputError("--bound must be at least 1")
            report = cmd_loops(args)
        elif args.command == "reach":
            report = cmd_reach(args)
        elif args.command == "sim":
            if args.max_steps < 1:
                raise InputError("--max-steps must be positive")
            report = cmd_sim(args, stdin, stdout)
        else:
            report = cmd_export(args, stdout)
    except ParseError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except (InputError, UnknownAlphabet, ConfigError, OSError, ValueError) as e:
        print(f"smlcheck: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.format == "json":
        stdout.write(json.dumps(report.to_json(), indent=2) + "\n")
    elif args.command != "export-mcrl2" or report.notes:
        stdout.write(report.to_text())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
