import io
import json
import re
import sys

import jsonschema
import pytest

from helpers import FIXTURES, ROOT
from smlcheck.cli import main

SCHEMA = json.loads((ROOT / "docs" / "report.schema.json").read_text())
SML = sorted(str(p) for p in FIXTURES.rglob("*.sml"))
TOPOLOGIES = sorted(str(p) for p in FIXTURES.rglob("*.json"))
F = {p.split("/")[-1]: p for p in SML}


def cli(*argv, stdin=""):
    out = io.StringIO()
    code = main(list(argv), stdin=io.StringIO(stdin), stdout=out)
    return code, out.getvalue()


def cli_json(*argv):
    code, text = cli(*argv, "--format", "json")
    doc = json.loads(text)
    jsonschema.validate(doc, SCHEMA)
    assert doc["exit_code"] == code
    return code, doc


def findings_json(doc):
    found = {(f["kind"], f["message"]) for c in doc["classes"] for f in c["findings"]}
    return found | {(f["kind"], f["message"]) for f in doc["findings"]}


def findings_text(text):
    return {
        (m.group(1), m.group(2))
        for m in re.finditer(r"^\s*(loop|scc|livelock|deadlock): (.*)$", text, re.M)
    }


def test_loops_cooling():
    code, doc = cli_json("loops", F["ecal_cooling_dee.sml"], "--no-siblings",
                         "--alphabet", "FwCHILDREN=OK,ERROR,NO_CONNECTION")
    assert code == 1
    [cls] = doc["classes"]
    [loop] = cls["findings"]
    assert loop["data"]["loop_class"] == ["ERROR", "NO_CONNECTION"]
    assert sorted(c["state"] for c in loop["data"]["core"]) == ["ERROR", "NO_CONNECTION"]


def test_reach_endcap(tmp_path):
    dot = tmp_path / "g.dot"
    code, doc = cli_json("reach", F["endcap_like.sml"], "--dot", str(dot))
    assert code == 1
    comps = doc["classes"][0]["details"]["components"]
    assert len(comps) == 2 and {"states": ["OFF"], "kind": "source"} in comps
    assert dot.read_text().count("subgraph cluster_") == 2
    assert any("under-approximation" in n for n in doc["notes"])


def test_check_chamber():
    assert cli("check", F["chamber.sml"])[0] == 0


def test_do_referer_caveat(tmp_path):
    p = tmp_path / "d.sml"
    p.write_text("class: D\n state: S\n  when ( $ANY$FwCHILDREN in_state A ) do GO\n  action: GO\n   move_to S\n")
    _, doc = cli_json("loops", str(p), "--alphabet", "FwCHILDREN=A,B")
    assert any("do referers" in c for c in doc["classes"][0]["caveats"])


def test_sim_livelock_and_wheel():
    code, doc = cli_json("sim", str(FIXTURES / "livelock" / "ecal_livelock.json"), "--max-steps", "100")
    assert code == 1 and doc["simulation"]["outcome"] == "livelock"
    code, doc = cli_json("sim", str(FIXTURES / "wheel" / "wheel.json"), "--seed", "1", "--max-steps", "2000")
    assert code == 0 and doc["simulation"]["outcome"] == "completed"


def test_sim_script_and_trace(tmp_path):
    script = tmp_path / "s.jsonl"
    script.write_text('{"at": 0, "inject": {"target": 1, "command": "ON"}}\n')
    trace = tmp_path / "t.jsonl"
    code, doc = cli_json("sim", str(FIXTURES / "wheel" / "wheel.json"), "--script", str(script),
                         "--trace", str(trace))
    assert code == 0 and doc["simulation"]["outcome"] == "quiescent"
    lines = trace.read_text().splitlines()
    assert json.loads(lines[0])["step"] == "Injection"
    assert json.loads(lines[-1])["outcome"] == "quiescent"


def test_sim_repl():
    code, text = cli("sim", str(FIXTURES / "wheel" / "sector_small.json"), "--repl",
                     stdin="fire 0\nshow 1\nquit\n")
    assert code == 0 and "fsm 1 (Sector)" in text


def test_loops_dimacs(tmp_path):
    out = tmp_path / "f.cnf"
    cli("loops", F["ecal_cooling_dee.sml"], "--alphabet", "FwCHILDREN=OK,ERROR,NO_CONNECTION",
        "--no-siblings", "--dimacs", str(out))
    assert re.search(r"^p cnf \d+ \d+$", out.read_text(), re.M)


def test_export_with_props(tmp_path):
    out = tmp_path / "chamber.mcrl2"
    code, doc = cli_json("export-mcrl2", F["chamber.sml"], "-o", str(out), "--props")
    assert code == 0
    assert out.read_text() == (ROOT / "tests" / "golden" / "chamber.mcrl2").read_text()
    assert len(list(tmp_path.glob("chamber.*.mcf"))) == 6


def test_export_to_stdout():
    code, text = cli("export-mcrl2", str(FIXTURES / "wheel" / "wheel.json"))
    assert code == 0 and text.startswith("% Generated")


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["loops", "--nope", F["chamber.sml"]],
        [],
        ["loops", "/nonexistent.sml"],
        ["sim", str(FIXTURES / "wheel" / "wheel.json"), "--max-steps", "0"],
        ["loops", F["chamber.sml"], "--multiplicity", "RPC_HV=zero"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv, stdout=io.StringIO()) == 2


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.sml"
    bad.write_text("class: X\n foo\n")
    assert cli("check", str(bad))[0] == 2
    assert "bad.sml:2:2: error:" in capsys.readouterr().err


def test_output_follows_input_order():
    files = [F["endcap_like.sml"], F["ecal_cooling_dee.sml"], F["chamber.sml"]]
    _, doc = cli_json("check", *files)
    assert [c["file"] for c in doc["classes"]] == files


@pytest.mark.parametrize("path", SML, ids=lambda p: p.split("fixtures/")[1])
@pytest.mark.parametrize("command", ["check", "loops", "reach"])
def test_schema_and_text_json_agreement(command, path):
    code, doc = cli_json(command, path)
    code_text, text = cli(command, path)
    assert code == code_text
    assert findings_json(doc) == findings_text(text)
    assert (code == 1) == bool(findings_json(doc))
    for c in doc["classes"]:
        assert all(v >= 0 for v in c["timings_ms"].values())


@pytest.mark.parametrize("path", TOPOLOGIES, ids=lambda p: p.split("fixtures/")[1])
def test_schema_sim_and_export(path):
    code, doc = cli_json("sim", path, "--max-steps", "500")
    assert findings_json(doc) == findings_text(cli("sim", path, "--max-steps", "500")[1])
    assert cli_json("export-mcrl2", path)[0] == 0


def test_console_script_module():
    import subprocess

    r = subprocess.run([sys.executable, "-m", "smlcheck.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "smlcheck" in r.stdout
