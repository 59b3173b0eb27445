import csv
import json
from pathlib import Path
from typing import Any

import pytest

from dcf_stability.cli import parse_args, run, validate


def _write(tmp_path: Path, document: Any) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document))
    return path


def _run(capsys, tmp_path: Path, document: Any, *command: str) -> tuple[int, Any]:
    config = _write(tmp_path, document)
    out = tmp_path / "out"
    code = run(["--config", str(config), "--output-dir", str(out), "--workers", "1", *command])
    return code, json.loads(capsys.readouterr().out)


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open() as f:
        return list(csv.DictReader(f))


def test_validate_echoes_defaults():
    report = validate({})
    assert report["valid"]
    assert report["config"]["system"]["window"] == 32
    assert "system" in report["defaults_applied"]


def test_validate_echo_is_fixed_point():
    first = validate({"nodes": [{"rate": 1000000}], "sweep": {"fixed": [[0, 1]]}})
    second = validate(first["config"])
    assert second["config"] == first["config"]
    assert second["defaults_applied"] == []


def test_validate_reports_errors(capsys, tmp_path):
    code, report = _run(capsys, tmp_path, {"system": {"window": 1}}, "validate")
    assert code == 0
    assert not report["valid"]
    assert any("window" in e for e in report["errors"])


def test_validate_negative_rate():
    report = validate({"nodes": [{"rate": -5.0}, {"rate": 1.0}]})
    assert not report["valid"]
    assert report["config"] is None


def test_unknown_key_exits_with_config_error(capsys, tmp_path):
    code, report = _run(capsys, tmp_path, {"system": {"windw": 4}}, "solve")
    assert code == 2
    assert report["error"] == "ConfigError"
    assert "system.windw: unknown key" in report["details"]


def test_invalid_json_exits_with_config_error(capsys, tmp_path):
    config = tmp_path / "config.json"
    config.write_text("{")
    assert run(["--config", str(config), "solve"]) == 2
    assert json.loads(capsys.readouterr().out)["error"] == "ConfigError"


def test_solve_zero_load(capsys, tmp_path):
    code, summary = _run(capsys, tmp_path, {"nodes": [{"rate": 0}, {"rate": 0}]}, "solve")
    assert code == 0
    rows = _rows(tmp_path / "out" / "solve.csv")
    assert len(rows) == 4
    for row in rows:
        assert float(row["tau"]) == pytest.approx(0.0, abs=1e-9)
        assert float(row["rho"]) == 0.0
    assert all(s["stable"] for s in summary["solutions"])
    meta = json.loads((tmp_path / "out" / "solve.meta.json").read_text())
    assert meta["command"] == "solve"


def test_classify_light_load(capsys, tmp_path):
    document = {"system": {"window": 128}, "nodes": [{"rate": 1e6}, {"rate": 1e6}]}
    code, summary = _run(capsys, tmp_path, document, "classify")
    assert code == 0
    assert summary["verdict"] == "stable_all_ic"
    assert (tmp_path / "out" / "classify.json").exists()


def test_single_node_boundary(capsys, tmp_path):
    code, _ = _run(capsys, tmp_path, {"nodes": [{"rate": 0}]}, "boundary")
    assert code == 0
    rows = _rows(tmp_path / "out" / "boundary.csv")
    assert len(rows) == 1
    assert float(rows[0]["boundary"]) == pytest.approx(6.4589e6, abs=1e5 / 16)
    assert rows[0]["method"] == "analytic_sigma"


def test_aloha_frontiers(capsys, tmp_path):
    document = {"aloha": {"wbar": [1, 5], "grid": 50}}
    code, summary = _run(capsys, tmp_path, document, "aloha")
    assert code == 0
    assert summary["aloha_wbar1"]["shape"] == "concave"
    assert summary["aloha_wbar5"]["shape"] == "convex"
    assert (tmp_path / "out" / "aloha_wbar5.csv").exists()


def test_simulate_writes_report(capsys, tmp_path):
    document = {"nodes": [{"rate": 1e6}], "simulation": {"t_f": 10.0, "sample_interval": 0.1}}
    code, summary = _run(capsys, tmp_path, document, "simulate")
    assert code == 0
    assert not summary["unstable"]
    report = json.loads((tmp_path / "out" / "simulate.json").read_text())
    assert report["seed"] == 1
    assert len(_rows(tmp_path / "out" / "population.csv")) == len(report["sample_times"])


def test_nonconvergence_exits_one(capsys, tmp_path):
    document = {"nodes": [{"rate": 1e6}, {"rate": 1e6}], "solver": {"max_iterations": 1}}
    code, report = _run(capsys, tmp_path, document, "solve")
    assert code == 1
    assert report["error"] == "NonConvergenceError"
    assert report["details"][0]["iterations"] == 1


def test_fig_recipe_choice_is_checked():
    with pytest.raises(SystemExit):
        parse_args(["fig", "fig99"])


def test_parse_args_overrides_runtime(tmp_path):
    command, options = parse_args(["--workers", "2", "--output-dir", str(tmp_path), "aloha"])
    assert command is not None
    assert options.runtime.workers == 2
    assert options.runtime.output_dir == tmp_path
