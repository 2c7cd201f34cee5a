import csv
import subprocess
import sys

import numpy as np
import pytest

from nmql import model, scenarios
from nmql.cli import EXIT_INVALID, EXIT_OK, EXIT_PARTIAL, main
from nmql.model import ModelConfig, SimulationGrid
from nmql.scenarios import Scenario

TINY_GRID = SimulationGrid.uniform(2 * np.pi, 9, n_inner=200)


@pytest.fixture
def tiny(monkeypatch):
    cfg = scenarios.SCENARIOS["fig1_temperature"].config.replace(grid=TINY_GRID)
    sc = Scenario("tiny", "two temperatures on a short grid", cfg, (("baths.temperature", (1.0, 5.0)),))
    monkeypatch.setitem(scenarios.SCENARIOS, "tiny", sc)
    return sc


def _summary(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_list_shows_all_builtins(capsys):
    assert main(["list"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) >= 8
    assert any(line.startswith("fig3_initial_state") for line in lines)


def test_unknown_scenario_lists_valid_names(capsys):
    assert main(["run", "no_such_thing"]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "no_such_thing" in err and "fig1_temperature" in err


def test_run_writes_summary_and_resumes(tiny, tmp_path):
    out = tmp_path / "a"
    assert main(["run", "tiny", "--out", str(out)]) == EXIT_OK
    rows = _summary(out / "tiny_summary.csv")
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert all(float(r["min_symplectic"]) >= 0.5 * (1 - 1e-6) for r in rows)
    point_csv = (out / rows[0]["csv"]).read_text().splitlines()
    assert point_csv[0].startswith("t,E_N,") and len(point_csv) == 10
    assert main(["run", "tiny", "--out", str(out)]) == EXIT_OK
    assert all(r["message"] == "cached" for r in _summary(out / "tiny_summary.csv"))


def test_runs_are_deterministic_across_directories_and_workers(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "tiny", "--out", str(a)]) == EXIT_OK
    assert main(["run", "tiny", "--out", str(b), "--threads", "2"]) == EXIT_OK
    for k in range(2):
        name = f"tiny_{k:03d}.csv"
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_partial_failure_exit_code(monkeypatch, tmp_path):
    cfg = scenarios.SCENARIOS["fig1_temperature"].config.replace(grid=TINY_GRID)
    sc = Scenario("mixed", "one valid and one invalid coupling", cfg, (("baths.coupling", (1e-3, -1.0)),))
    monkeypatch.setitem(scenarios.SCENARIOS, "mixed", sc)
    assert main(["run", "mixed", "--out", str(tmp_path)]) == EXIT_PARTIAL
    rows = _summary(tmp_path / "mixed_summary.csv")
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert "bath1.coupling" in rows[1]["message"]


def test_config_file_replaces_the_base(tiny, tmp_path):
    path = tmp_path / "cfg.json"
    model.save(tiny.config.with_value("baths.coupling", 2e-3), path)
    assert main(["run", "tiny", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    bad = tmp_path / "bad.json"
    model.save(ModelConfig().with_value("osc1.mass", -1.0), bad)
    assert main(["run", "tiny", "--config", str(bad), "--out", str(tmp_path / "p")]) == EXIT_INVALID


def test_validate(tmp_path, capsys):
    good = tmp_path / "good.json"
    model.save(ModelConfig(), good)
    assert main(["validate", str(good)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"
    bad = tmp_path / "bad.json"
    model.save(ModelConfig().with_value("bath2.cutoff", 0.0), bad)
    assert main(["validate", str(bad)]) == EXIT_INVALID
    assert "bath2.cutoff" in capsys.readouterr().err
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    assert main(["validate", str(junk)]) == EXIT_INVALID


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nmql", "list"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "markov_limit" in proc.stdout
