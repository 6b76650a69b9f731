import json
import subprocess
import sys

import pytest

from csts.cli import EXIT_DATA, EXIT_GATE, EXIT_OK, EXIT_USAGE, main
from csts.experiment import tree_digest

SMALL = {"duration_hours": 48.0, "bootstrap": 100, "viability": {"control_hours": 60.0}}


@pytest.fixture()
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def test_usage_errors(capsys):
    assert main(["--help"]) == EXIT_OK
    assert main([]) == EXIT_USAGE
    assert main(["synth", "--bogus"]) == EXIT_USAGE
    assert main(["perturb", "--level", "P9", "--in", "x.csv", "--out", "y.csv"]) == EXIT_USAGE


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["synth", "--config", str(broken), "--out", str(tmp_path / "o")]) == EXIT_DATA
    wm = tmp_path / "wm.json"
    wm.write_text(json.dumps({"window_minutes": 15}))
    assert main(["synth", "--config", str(wm), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_artifacts(tmp_path, small_cfg):
    out = str(tmp_path / "empty")
    assert main(["eval", "--config", small_cfg, "--out", out]) == EXIT_DATA
    assert main(["features", "--config", small_cfg, "--out", out]) == EXIT_DATA
    assert main(["diagnose", "--config", small_cfg, "--out", out]) == EXIT_DATA
    assert main(["perturb", "--level", "P1", "--in", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.csv")]) == EXIT_DATA
    assert main(["ingest", "--in", str(tmp_path / "none.csv"), "--adapter", "enva"]) == EXIT_DATA


def test_stage_pipeline(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert main(["synth", "--config", small_cfg, "--out", str(out)]) == EXIT_OK
    # features written, eval still needs them
    assert main(["eval", "--config", small_cfg, "--out", str(out)]) == EXIT_DATA
    assert main(["features", "--config", small_cfg, "--out", str(out)]) == EXIT_OK
    assert main(["eval", "--config", small_cfg, "--out", str(out), "--task", "LM"]) == EXIT_OK
    assert main(["diagnose", "--config", small_cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "tables" / "lm_transfer.csv").exists()
    assert json.loads((out / "tables" / "orientation.json").read_text())["reports"]

    raw = out / "data" / "envb_lm.csv"
    assert main(["perturb", "--level", "P2", "--in", str(raw), "--out", str(tmp_path / "p2.csv")]) == EXIT_OK
    assert main(["ingest", "--in", str(tmp_path / "p2.csv"), "--adapter", "envb",
                 "--policy", str(out / "data" / "envb_lm.policy.json"), "--out", str(tmp_path / "g")]) == EXIT_OK
    rep = json.loads((tmp_path / "g" / "p2.ingest.json").read_text())
    assert rep["emitted"] == rep["records"]
    assert (tmp_path / "g" / "p2.graph.jsonl").stat().st_size > 0

    enva = out / "data" / "enva_lm.csv"
    assert main(["viability", "--out", str(tmp_path / "v"), "--train", str(enva)]) == EXIT_USAGE
    assert main(["viability", "--out", str(tmp_path / "v"), "--train", str(enva), "--test", str(enva),
                 "--test-adapter", "enva"]) == EXIT_OK


def test_viability_gate_exit_code(tmp_path, small_cfg):
    assert main(["viability", "--config", small_cfg, "--out", str(tmp_path)]) == EXIT_GATE
    v = json.loads((tmp_path / "tables" / "viability.json").read_text())
    assert v["divergence"]["verdict"] == "not-viable"


def test_training_gate_exit_code(tmp_path):
    cfg = tmp_path / "nolm.json"
    cfg.write_text(json.dumps({**SMALL, "tasks": ["LM"], "injections": {"LM:EnvA": {"n_campaigns": 0}}}))
    out = str(tmp_path / "o")
    assert main(["synth", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert main(["features", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert main(["eval", "--config", str(cfg), "--out", out]) == EXIT_GATE


def test_repro_deterministic(tmp_path, small_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["repro", "--config", small_cfg, "--out", str(a)]) == EXIT_OK
    assert main(["repro", "--config", small_cfg, "--out", str(b)]) == EXIT_OK
    assert tree_digest(a) == tree_digest(b)
    rows = (a / "tables" / "lm_robustness.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 4


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "csts.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "repro" in res.stdout
