import csv
import io
import json

import pytest

from homfrac import group as G
from homfrac.cli import run


def _json(capsys, argv):
    code = run(argv)
    return code, json.loads(capsys.readouterr().out)


def test_constants_json(capsys):
    code, doc = _json(capsys, ["constants", "--group", "heisenberg:1", "--samples", "20000"])
    assert code == 0
    assert doc["Q"] == 4 and doc["gauge"] == "koranyi"
    assert abs(doc["sigma_Q"]["value"] - 4.9348) < 0.1


def test_validate_ok(capsys):
    code, doc = _json(capsys, ["validate", "--group", "heisenberg:2"])
    assert code == 0 and doc["ok"]


def test_validate_reports_grading(tmp_path, capsys):
    path = tmp_path / "bad.json"
    G.save_spec(G.GroupSpec("bad", (1, 1, 1), ((0, 1, 2, 1.0),)), path)
    assert run(["validate", "--group", str(path)]) == 2
    err = capsys.readouterr().err
    assert "grading" in err and "(1, 2, 3)" in err


@pytest.mark.parametrize("argv", [
    ["constants", "--group", "nope"],
    ["constants", "--group", "parabolic_r2", "--gauge", "koranyi"],
    ["hedberg", "--Q", "1", "--s", "0.5"],
    ["fracop", "--s", "1.5", "--point", "0,0,0"],
    ["constants", "--bogus-flag"],
])
def test_config_errors_exit_2(argv, capsys):
    assert run(argv) == 2


def test_hedberg(capsys):
    code, doc = _json(capsys, ["hedberg", "--Q", "4", "--s", "0.5"])
    assert code == 0
    assert json.dumps(doc).count("1.754") >= 1


def test_fracop_csv(capsys):
    code = run(["fracop", "--group", "euclidean:1", "--field", "gaussian", "--s", "0.5",
                "--point", "0", "--samples", "20000"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    assert abs(float(rows[0]["value"]) - 7.0898) < 0.1


def test_counterexample_csv(capsys):
    assert run(["counterexample", "--k", "1,300", "--eta", "0.01"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["saturated"] for r in rows] == ["False", "True"]


def test_sobolev_opt_writes_outputs(tmp_path, capsys):
    code = run(["sobolev-opt", "--grid", "8", "--iters", "3", "--out-dir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "trace.csv").exists()
    assert (tmp_path / "field.hfg").read_bytes()[:4] == b"HFG1"


def test_report_quick_subset(capsys):
    code, doc = _json(capsys, ["report", "--quick", "--only", "1,16"])
    assert code == 0 and doc["passed"]
    assert [c["id"] for c in doc["criteria"]] == [1, 16]
