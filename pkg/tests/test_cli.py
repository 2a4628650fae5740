import hashlib
import json
import subprocess
import sys

import pytest

from etc_traffic import cli

from conftest import CONTROLLER, PLANT, SIGMA_SQ

SMALL = f"""
times = [4e-4, 8e-4, 20e-4]
m = 4
[system]
plant = {json.dumps(PLANT)}
controller = {json.dumps(CONTROLLER)}
sigma_sq = {SIGMA_SQ}
[delta]
error_set = "pretrigger"
n_samples = 4000
[isochron]
rho = 1.0
"""


@pytest.fixture(scope="module")
def abs_path(abstraction, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "abstraction.json"
    path.write_bytes(abstraction.export("json"))
    return path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_help_lists_commands():
    out = subprocess.run([sys.executable, "-m", "etc_traffic.cli", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for word in ("build", "simulate", "validate", "export", "--workers", "--verbose"):
        assert word in out


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == cli.EXIT_USAGE


def test_missing_field_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL.replace(f"sigma_sq = {SIGMA_SQ}", ""))
    assert cli.main(["build", str(cfg), "--output-dir", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "system.sigma_sq" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert cli.main(["build", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG


def test_pipeline_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "printed.toml"
    cfg.write_text(SMALL.replace("-x1^3 + x1*x2^2", "x1^3 + x1*x2^2"))
    code = cli.main(["build", str(cfg), "--output-dir", str(tmp_path / "o")])
    assert code == cli.EXIT_PIPELINE
    assert "stage 'delta'" in capsys.readouterr().err


def test_build_is_reproducible(tmp_path, monkeypatch):
    cfg = tmp_path / "small.toml"
    cfg.write_text(SMALL)
    assert cli.main(["build", str(cfg), "--output-dir", str(tmp_path / "a")]) == 0
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "b"))
    assert cli.main(["build", str(cfg)]) == 0
    for name in ("abstraction.json", "graph.dot", "bounds.csv", "transitions.csv"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["states"] == 12
    assert set(manifest["stage_seconds"]) >= {"delta", "overapprox", "reach", "innermost"}
    assert manifest["reference_transitions"] == 536


def test_simulate_reference_run(abs_path, tmp_path):
    code = cli.main(["simulate", str(abs_path), "--x0", "1.5", "2", "--duration", "0.8",
                     "--output-dir", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "trace_validation.json").read_text())
    assert report["passed"] and report["events_checked"] > 100
    assert (tmp_path / "trace.csv").read_text().startswith("event_index,t_k,x1,x2")


def test_simulate_rejects_origin_and_bad_shapes(abs_path, tmp_path):
    args = ["--duration", "0.1", "--output-dir", str(tmp_path)]
    assert cli.main(["simulate", str(abs_path), "--x0", "0", "0"] + args) == cli.EXIT_USAGE
    assert cli.main(["simulate", str(abs_path), "--x0", "1"] + args) == cli.EXIT_USAGE


def test_simulate_zero_duration(abs_path, tmp_path):
    code = cli.main(["simulate", str(abs_path), "--x0", "1", "1", "--duration", "0",
                     "--output-dir", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "trace_validation.json").read_text())["events_checked"] == 0


def test_simulate_outside_cover(abs_path, tmp_path):
    code = cli.main(["simulate", str(abs_path), "--x0", "40", "0", "--duration", "0.01",
                     "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_COVERAGE


def test_validate(abs_path, tmp_path, caplog):
    assert cli.main(["validate", str(abs_path), "--samples", "50", "--seed", "2",
                     "--output-dir", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "validation_summary.json").read_text())
    assert summary["passed"] and summary["worst_lower_margin"] >= -1e-6
    assert cli.main(["validate", str(abs_path), "--samples", "0",
                     "--output-dir", str(tmp_path)]) == 0
    assert "vacuously" in caplog.text


def test_validate_reports_shrunk_bound(abs_path, tmp_path, capsys):
    data = json.loads(abs_path.read_text())
    st = next(s for s in data["states"] if (s["i"], s["j"]) == (2, 4))
    st["tau_upper"] = st["tau_lower"] + 1e-5
    data["epsilon"] = max(s["tau_upper"] - s["tau_lower"] for s in data["states"])
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    code = cli.main(["validate", str(bad), "--samples", "100", "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_VIOLATION
    assert "region (2, 4)" in capsys.readouterr().err


@pytest.mark.parametrize("fmt", ["json", "dot", "csv-bounds", "csv-transitions"])
def test_export_to_file(abs_path, abstraction, tmp_path, fmt):
    out = tmp_path / f"model.{fmt}"
    assert cli.main(["export", str(abs_path), "--format", fmt, "--output", str(out)]) == 0
    assert out.read_bytes() == abstraction.export(fmt)


def test_export_csv_pair_and_stdout(abs_path, tmp_path, capsys):
    assert cli.main(["export", str(abs_path), "--format", "csv", "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "bounds.csv").exists() and (tmp_path / "transitions.csv").exists()
    assert cli.main(["export", str(abs_path), "--format", "dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph traffic {")
