import csv
import json
from importlib import resources

import jsonschema
import pytest

from survsens.cli import main

SCHEMA = json.loads(resources.files("survsens").joinpath("schemas/report.schema.json").read_text())


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([argv[0], "--out-dir", str(out), *argv[1:]])
    return code, out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _report(out):
    rep = json.loads((out / "report.json").read_text())
    jsonschema.validate(rep, SCHEMA)
    return rep


@pytest.fixture(scope="module")
def analyzed(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    code, out = _run(tmp, "a", "analyze", "--t", "1", "2", "--q", "0.032", "--paths", "1000", "--rmst")
    assert code == 0
    return tmp, out


def test_analyze_outputs(analyzed):
    _, out = analyzed
    for f in ("bounds.csv", "bands.csv", "sensitivity.csv", "report.json", "diagnostics.json"):
        assert (out / f).exists()
    rep = _report(out)
    assert rep["command"] == "analyze" and rep["data"]["n"] == 1000
    assert rep["results"]["checks"]["v0_bounds_equal_theta"] is True


def test_analyze_v0_bounds_equal_theta(analyzed):
    rows = [r for r in _rows(analyzed[1] / "bounds.csv") if r["estimand"] == "survival_difference"]
    zero = [r for r in rows if float(r["v"]) == 0.0]
    assert len(zero) == 2
    for r in zero:
        assert r["lower"] == r["theta"] == r["upper"]


def test_analyze_echoes_q_mapping(analyzed):
    rows = [r for r in _rows(analyzed[1] / "bounds.csv") if r["q"]]
    assert rows and all(float(r["q"]) == 0.032 for r in rows)
    assert all(f"{float(r['v']):.3g}" == "0.00106" for r in rows)
    rep = _report(analyzed[1])
    assert any(b["q"] == 0.032 and round(b["v"], 5) == 0.00106 for b in rep["results"]["bounds"])


def test_analyze_rmst_rows(analyzed):
    rows = [r for r in _rows(analyzed[1] / "bounds.csv") if r["estimand"] == "rmst_difference"]
    assert len(rows) == 4


def test_analyze_deterministic(analyzed):
    tmp, out = analyzed
    code, out2 = _run(tmp, "b", "analyze", "--t", "1", "2", "--q", "0.032", "--paths", "1000", "--rmst")
    assert code == 0
    for f in ("bounds.csv", "bands.csv", "sensitivity.csv"):
        assert (out / f).read_bytes() == (out2 / f).read_bytes()
    r1, r2 = _report(out), _report(out2)
    for r in (r1, r2):
        r.pop("created")
        r["config"].pop("out_dir")
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)


def test_analyze_config_round_trip(analyzed):
    tmp, out = analyzed
    code, out3 = _run(tmp, "c", "analyze", "--config", str(out / "report.json"))
    assert code == 0
    assert (out / "bounds.csv").read_bytes() == (out3 / "bounds.csv").read_bytes()


def test_benchmark_all_covariates(tmp_path):
    code, out = _run(tmp_path, "b", "benchmark", "--t", "1", "--R", "W1,W2")
    assert code == 0
    rows = _rows(out / "benchmark.csv")
    assert len(rows) == 1
    assert _report(out)["command"] == "benchmark"


def test_benchmark_leave_one_out(tmp_path):
    code, out = _run(tmp_path, "b", "benchmark", "--t", "1", "--d", "1", "--rv", "0.032")
    assert code == 0
    rows = _rows(out / "benchmark.csv")
    assert len(rows) == 3 and sum(1 for r in rows if r["kind"] == "mean") == 1
    rep = _report(out)
    assert rep["results"]["comparison"]["rv"] == 0.032


def test_simulate_custom(tmp_path):
    code, out = _run(tmp_path, "s", "simulate", "--profile", "custom", "--n", "200", "--reps", "50",
                     "--paths", "1000")
    assert code == 0
    for f in ("study.csv", "study.json", "checks.csv", "report.json", "diagnostics.json"):
        assert (out / f).exists()
    assert _report(out)["data"] is None


@pytest.mark.parametrize("argv,module", [
    (["simulate", "--profile", "custom", "--n", "0", "--reps", "50"], "cli"),
    (["simulate", "--profile", "custom", "--n", "200"], "cli"),
    (["analyze", "--t", "1", "--input", "/nonexistent.csv"], "cli"),
    (["analyze", "--v", "-1"], None),
    (["benchmark", "--R", "nope"], None),
])
def test_errors_exit_two(tmp_path, capsys, argv, module):
    code, _ = _run(tmp_path, "e", *argv)
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("survsens: error in ")
    if module:
        assert err.startswith(f"survsens: error in {module}")


def test_malformed_csv_reports_data_module(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,event,treatment,x\n1.0,2,1,0.5\n2.0,1,0,0.1\n")
    code, _ = _run(tmp_path, "e", "analyze", "--t", "1", "--input", str(bad))
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("survsens: error in data") and "hint" in err
