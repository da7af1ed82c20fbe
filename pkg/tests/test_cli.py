import json
from pathlib import Path

import pytest

from migrasim.cli import COMPARE_COLUMNS, EXIT_INCORRECT, EXIT_INVALID, EXIT_OK, main
from migrasim.presets import experiment_doc
from migrasim.scenario import ScenarioError, apply, validate

ROOT = Path(__file__).resolve().parents[1]


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture
def small(tmp_path):
    return write(tmp_path, experiment_doc("SingleTrackAllAtOnce", 200))


def test_shipped_scenarios_validate():
    for p in sorted((ROOT / "scenarios").glob("*.json")):
        assert main(["validate", str(p)]) == EXIT_OK, p


def test_run_writes_metrics_and_trace(small, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", small, "--out-dir", str(out), "--trace"]) == EXIT_OK
    text = (out / "metrics.csv").read_text()
    assert capsys.readouterr().out == text
    header, row = text.strip().split("\n")
    cells = dict(zip(header.split(","), row.split(",")))
    assert cells["correct"] == "true" and cells["sink_outputs"] == "200"
    trace = json.loads((out / "trace.json").read_text())
    assert any(r["kind"] == "op_stop" for r in trace)


def test_run_is_byte_identical_across_invocations(small, tmp_path):
    for d in ("a", "b"):
        assert main(["run", small, "--seed", "5", "--out-dir", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == \
        (tmp_path / "b" / "metrics.csv").read_bytes()


def test_run_json_and_variant_override(small, capsys):
    assert main(["run", small, "--variant", "single-track-partial", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["variant"] == "SingleTrackPartial"


def test_correctness_failure_exits_3(tmp_path):
    doc = experiment_doc("PauseDrainResume", 100)  # waiver set: state is dropped
    assert main(["run", write(tmp_path, doc)]) == EXIT_INCORRECT


def test_rejected_variant_exits_2(tmp_path, capsys):
    doc = experiment_doc("PauseDrainResume", 100, allow_inconsistency=False)
    assert main(["run", write(tmp_path, doc)]) == EXIT_INVALID
    assert "stateless" in capsys.readouterr().err


def test_invalid_documents_exit_2(tmp_path, capsys):
    doc = experiment_doc("SingleTrackAllAtOnce", 100)
    doc["migration"]["new_host"] = "Z"
    assert main(["validate", write(tmp_path, doc)]) == EXIT_INVALID
    assert "migration" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == EXIT_INVALID
    assert main(["run", str(bad)]) == EXIT_INVALID
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID
    assert main(["run", write(tmp_path, doc), "--variant", "teleport"]) == EXIT_INVALID


def test_validator_reports_paths():
    doc = experiment_doc("SingleTrackAllAtOnce", 100)
    doc["topology"]["default_link"]["bandwidth_bps"] = -1
    doc["migration"]["new_host"] = "C"
    with pytest.raises(ScenarioError) as err:
        validate(doc)
    paths = [p for p, _ in err.value.problems]
    assert any("default_link" in p for p in paths)


def test_apply_overrides_seed_and_variant():
    doc = experiment_doc("SingleTrackAllAtOnce", 10)
    out = apply(doc, 9, "partial")
    assert out["seed"] == 9 and out["migration"]["variant"] == "partial"
    assert doc["seed"] == 0


def test_compare_two_variants(small, tmp_path, capsys):
    assert main(["compare", small, "SingleTrackAllAtOnce", "SingleTrackPartial",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "compare.csv").read_text().strip().split("\n")
    assert lines[0].split(",") == COMPARE_COLUMNS and len(lines) == 3


def test_decide_table(tmp_path, capsys):
    path = ROOT / "scenarios" / "table5_decision.json"
    assert main(["decide", str(path), "--format", "json", "--out-dir", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "decision.json").read_text())
    assert [r["P (CM)"] for r in rows] == ["C", "C", "D", "D"]


def test_log_level_from_environment(small, monkeypatch, capsys):
    monkeypatch.setenv("MIGRASIM_LOG", "debug")
    assert main(["validate", small]) == EXIT_OK
