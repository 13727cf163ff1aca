import json
import subprocess
import sys

import numpy as np
import pytest

from hinfnet.cli import (EXIT_FAIL, EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, EXIT_RICCATI,
                         EXIT_USAGE, main)
from hinfnet.filter_design import FilterDesign
from hinfnet.network import model_to_json


@pytest.fixture(scope="module")
def design_file(sim1, tmp_path_factory):
    path = tmp_path_factory.mktemp("d") / "design.json"
    sim1.design.save(path)
    return str(path)


def test_design_writes_outputs(tmp_path, capsys):
    assert main(["design", "--case", "sim1", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    first = out.splitlines()[0]
    assert first.startswith("gamma^2=") and "reference 0.2500" in first
    doc = json.loads((tmp_path / "design_report.json").read_text())
    assert doc["reference"]["case"] == "sim1"
    assert abs(doc["reference"]["rel_dev_gamma2_phase1"]) <= 0.15
    assert [s["stage"] for s in doc["solver"]] == ["phase1", "floor", "refinement"]
    d = FilterDesign.load(tmp_path / "design.json")
    assert d.gamma2 == pytest.approx(doc["gamma2"])


def test_design_sim2_floor(tmp_path):
    assert main(["design", "--case", "sim2", "--out-dir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "design_report.json").read_text())
    assert min(doc["min_zbar"]) >= 0.1 - 1e-6


def test_design_from_model_file(sim1, tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(model_to_json(sim1.model, sim1.weights)))
    assert main(["design", "--model", str(path), "--out-dir", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "design_report.json").read_text())
    assert "reference" not in doc
    assert doc["gamma2"] == pytest.approx(sim1.design.gamma2, rel=1e-6)


def exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.mark.parametrize("argv", [
    ["design"],
    ["design", "--case", "sim1", "--model", "m.json"],
    ["verify", "--case", "sim1", "--trials", "0"],
    ["simulate", "--case", "sim1", "--dt", "-1"],
    ["design", "--model", "missing.json"],
    ["design", "--case", "sim9"],
    ["bogus"],
])
def test_usage_errors(argv, tmp_path):
    assert exit_code(argv + ["--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_parse_error_reports_position(tmp_path, capsys):
    bad = tmp_path / "m.json"
    bad.write_text('{"plant": {"A": [[1, 2]],\n "B": oops}')
    assert main(["design", "--model", str(bad), "--out-dir", str(tmp_path)]) == EXIT_PARSE
    assert "line 2 column" in capsys.readouterr().err


def test_infeasible_floor(tmp_path):
    code = main(["design", "--case", "sim1", "--zbar-min", "1.0", "--out-dir", str(tmp_path)])
    assert code == EXIT_INFEASIBLE


def test_riccati_failure(sim1, tmp_path, capsys):
    d = sim1.design
    bad = FilterDesign(d.gamma2, d.gammabar2, d.tau, d.Upsilon, d.Zbar,
                       tuple(np.eye(3) for _ in range(5)), d.Ybar, d.d)
    path = tmp_path / "bad.json"
    bad.save(path)
    code = main(["simulate", "--case", "sim1", "--design", str(path), "--t-final", "2",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_RICCATI
    assert "Riccati failure" in capsys.readouterr().err


def test_simulate_is_reproducible(design_file, tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        code = main(["simulate", "--case", "sim1", "--design", design_file, "--t-final", "4",
                     "--seed", "3", "--out-dir", str(d)])
        assert code == EXIT_OK
        outs.append((d / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]
    line = capsys.readouterr().out.splitlines()[-1]
    assert line.startswith("ratio=") and "p2=PASS" in line and "p3=PASS" in line
    rep = json.loads((tmp_path / "0" / "simulation_report.json").read_text())
    assert rep["pass"] and rep["cross_gains"]


def test_simulate_with_scenario_file(sim1, design_file, tmp_path):
    from hinfnet.simulator import noise_scenario

    sc = tmp_path / "sc.json"
    sc.write_text(json.dumps(noise_scenario(sim1.model, 0, 0, t_final=3.0).to_json()))
    assert main(["simulate", "--case", "sim1", "--design", design_file, "--scenario", str(sc),
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    doc = json.loads(sc.read_text())
    doc["xi"] = doc["xi"][:2]
    sc.write_text(json.dumps(doc))
    assert main(["simulate", "--case", "sim1", "--design", design_file, "--scenario", str(sc),
                 "--out-dir", str(tmp_path)]) == EXIT_PARSE


def test_verify_pass_and_ablation(design_file, tmp_path, capsys):
    code = main(["verify", "--case", "sim1", "--design", design_file, "--suite", "p1",
                 "--trials", "2", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["p1: PASS", "overall: PASS"]
    code = main(["verify", "--case", "sim1", "--design", design_file, "--suite", "p1",
                 "--trials", "2", "--zero-cross-gains", "--out-dir", str(tmp_path)])
    assert code == EXIT_FAIL
    assert capsys.readouterr().out.splitlines()[0] == "p1: FAIL (nodes 0, 3)"
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["cross_gains"] is False and rep["results"]["p1"]["fail_nodes"] == [0, 3]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hinfnet", "--version"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and out.stdout.startswith("hinfnet ")
