import socket
import subprocess
import sys

import pytest

from conftest import FIXTURES
from oracles import LEARN_RULES, learner_samples
from streamfusion import cli
from streamfusion.config import EngineConfig, parse_config
from streamfusion.fusion import RuleWeights
from streamfusion.learner import dump_samples

TRACES = ["--trace", f":ssrA={FIXTURES / 'fed_trace_a.ttl'}", "--trace", f":ssrB={FIXTURES / 'fed_trace_b.ttl'}"]
FED_RULE = str(FIXTURES / "rule_reid_split.ttl")


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_occlusion_to_stdout(capsys):
    code, out, _ = run(capsys, "run", FIXTURES / "occlusion_detections.csv")
    assert code == 0 and out == (FIXTURES / "occlusion_expected.csv").read_text()


def test_run_without_predictions(capsys):
    code, out, _ = run(capsys, "run", FIXTURES / "occlusion_detections.csv", "--no-emit-predictions")
    assert code == 0 and ",-1,-1,-1,-1" not in out and len(out.splitlines()) == 7


def test_run_empty_detections(tmp_path, capsys):
    det = tmp_path / "empty.csv"
    det.write_text("frame,x,y,w,h,score,label\n")
    code, out, _ = run(capsys, "run", det, "--tracks", tmp_path / "tracks.csv")
    assert code == 0 and (tmp_path / "tracks.csv").read_text() == ""


def test_run_writes_output_and_explanations(tmp_path, capsys):
    code, _, _ = run(capsys, "run", FIXTURES / "occlusion_detections.csv", "--tracks", tmp_path / "t.csv",
                     "--output", tmp_path / "out.ttl", "--explain", tmp_path / "explain.tsv")
    assert code == 0
    assert (tmp_path / "out.ttl").read_text() == (FIXTURES / "occlusion_expected.ttl").read_text()
    assert (tmp_path / "explain.tsv").read_text() == (FIXTURES / "occlusion_expected_explain.tsv").read_text()


@pytest.mark.parametrize("content, fragment", [
    ("ssr:r a sh:NodeShape ; sh:rule [ a sh:CQELSRule ; sh:construct \"\"\"CONSTRUCT { ?X :o ?Y . }", "unterminated"),
    ("ssr:r a sh:NodeShape ; sh:rule [ a sh:CQELSRule ; sh:construct "
     "\"\"\"CONSTRUCT { ?X :o ?Z . } WHERE { STREAM <:s> { ?X :p ?Y . } }\"\"\" ] .", "?Z"),
])
def test_bad_rules_exit_2(tmp_path, capsys, content, fragment):
    rules = tmp_path / "rules.ttl"
    rules.write_text(content)
    code, _, err = run(capsys, "run", FIXTURES / "occlusion_detections.csv", "--rules", rules)
    assert code == 2 and err.startswith("error:") and fragment in err


@pytest.mark.parametrize("argv", [
    ["run", "/nonexistent.csv"],
    ["run", "{bad}"],
    ["run", "{det}", "--set", "iou_gate=3"],
    ["run", "{det}", "--weights", "{bad}"],
    ["nope"],
])
def test_usage_errors_exit_2(tmp_path, capsys, argv):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n")
    argv = [a.format(bad=bad, det=FIXTURES / "occlusion_detections.csv") for a in argv]
    code, _, err = run(capsys, *argv)
    assert code == 2 and "error" in err


def test_parse_prints_round_trippable_rules(tmp_path, capsys):
    code, out, _ = run(capsys, "parse", FIXTURES / "rule_enters.ttl")
    assert code == 0 and "verdict=safe" in out and "kind=soft" in out
    again = tmp_path / "again.ttl"
    again.write_text(out)
    code, out2, _ = run(capsys, "parse", again)
    assert code == 0 and out2 == out


def test_parse_ast(capsys):
    code, out, _ = run(capsys, "parse", FIXTURES / "rule_reid.ttl", "--ast")
    assert code == 0 and out.startswith("rule: Rule\n") and "window: Range\n          ticks: 5\n" in out


def test_config_defaults_round_trip(capsys):
    code, out, _ = run(capsys, "config", "--defaults")
    assert code == 0 and parse_config(out) == EngineConfig()
    code, out, _ = run(capsys, "config", "--set", "max_age=7")
    assert parse_config(out).max_age == 7


def _samples(tmp_path, extra=""):
    path = tmp_path / "samples.tsv"
    path.write_text(dump_samples(learner_samples(4)[0]) + extra)
    return path


def test_train_writes_weights(tmp_path, capsys):
    code, out, err = run(capsys, "train", _samples(tmp_path), "--report", tmp_path / "report.txt")
    weights = RuleWeights.loads(out)
    assert code == 0 and set(weights.weights) == set(LEARN_RULES)
    assert "converged=" in err and (tmp_path / "report.txt").read_text().startswith("epochs\t")


def test_train_zero_epochs_echoes_init(tmp_path, capsys):
    init = RuleWeights({r: 0.25 for r in LEARN_RULES})
    (tmp_path / "init.tsv").write_text(init.dumps())
    code, out, _ = run(capsys, "train", _samples(tmp_path), "--init", tmp_path / "init.tsv", "--epochs", "0")
    assert code == 0 and RuleWeights.loads(out) == init


def test_train_infeasible_gold_warns(tmp_path, capsys):
    extra = "99\tgold\t:b9 sosa:isSampleOf :o9; sosa:resultTime 99.\n"
    code, _, err = run(capsys, "train", _samples(tmp_path, extra))
    assert code == 0 and "not derivable" in err and "infeasible=1" in err


def test_train_bad_lr(tmp_path, capsys):
    code, _, err = run(capsys, "train", _samples(tmp_path), "--lr", "0")
    assert code == 2 and "learning rate" in err


def test_federate_equal(tmp_path, capsys):
    out_dir = tmp_path / "fed"
    code, out, _ = run(capsys, "federate", FIXTURES / "topology_3node.conf", FED_RULE, *TRACES, "--out-dir", out_dir)
    assert code == 0 and out.startswith("verdict\tEQUAL\n")
    assert sorted(p.name for p in out_dir.iterdir()) == ["a.ttl", "b.ttl", "monolithic.ttl", "root.ttl",
                                                         "verdict.tsv"]
    assert (out_dir / "root.ttl").read_text() == (out_dir / "monolithic.ttl").read_text()


def test_federate_unreachable_node(tmp_path, capsys):
    with socket.socket() as held:  # bound but not listening: the node cannot take it and nobody answers
        held.bind(("127.0.0.1", 0))
        port = held.getsockname()[1]
        topo = tmp_path / "topo.conf"
        topo.write_text(f"node root inproc :ssrA\nnode b 127.0.0.1:{port} :ssrB\n")
        code, _, err = run(capsys, "federate", topo, FED_RULE, *TRACES, "--attempts", "2")
    assert code == 3 and "unreachable" in err


@pytest.mark.parametrize("extra, fragment", [
    (["--trace", ":nope=x.ttl"], "cannot read"),
    (["--trace", "broken"], "stream=file"),
    (["--ticks", "a:b"], "--ticks"),
])
def test_federate_usage_errors(capsys, extra, fragment):
    code, _, err = run(capsys, "federate", FIXTURES / "topology_2node.conf", FED_RULE, *TRACES, *extra)
    assert code == 2 and fragment in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "streamfusion", "config", "--defaults"], capture_output=True,
                          text=True, timeout=60)
    assert proc.returncode == 0 and "iou_gate=0.8" in proc.stdout
