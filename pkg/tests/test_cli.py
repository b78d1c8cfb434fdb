import csv
import json
import math
import os
from pathlib import Path

import pytest

from sqsos.bench.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, main
from sqsos.bench.problems import data_dir
from sqsos.bench.report import SUITE_SCHEMA, mask_timing, read_trace

GOLDEN = Path(__file__).parent / "golden" / "suite_seed7.json"
TOY = data_dir() / "extra" / "toy_custom.json"


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def same_shape(a, b, where="$"):
    """Structural equality with a relative tolerance on floats."""
    assert type(a) is type(b) or {type(a), type(b)} <= {int, float}, where
    if isinstance(a, dict):
        assert sorted(a) == sorted(b), where
        if where.endswith(".solution"):
            # polynomial text carries full float reprs; numbers are checked via f and theta
            return
        for k in a:
            same_shape(a[k], b[k], f"{where}.{k}")
    elif isinstance(a, list):
        assert len(a) == len(b), where
        for k, (x, y) in enumerate(zip(a, b)):
            same_shape(x, y, f"{where}[{k}]")
    elif isinstance(a, float):
        assert math.isclose(a, b, rel_tol=1e-5, abs_tol=1e-9), (where, a, b)
    else:
        assert a == b, where


@pytest.fixture(scope="module")
def suite_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("suite")
    a, b = d / "a.json", d / "b.json"
    assert main(["suite", "--seed", "7", "--out", str(a)]) == EXIT_OK
    assert main(["suite", "--seed", "7", "--jobs", "4", "--out", str(b)]) == EXIT_OK
    return json.loads(a.read_text()), json.loads(b.read_text())


class TestSolve:
    def test_vdp_report(self, tmp_path, capsys):
        out, trace = tmp_path / "r.json", tmp_path / "t.csv"
        code = main(["solve", str(data_dir() / "vdp_roa.json"), "--method", "sqsos",
                     "--out", str(out), "--trace", str(trace)])
        assert code == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["status"] == "optimal" and rep["method"] == "sqsos"
        assert rep["certificate"]["violations"] == 0
        rows = read_trace(trace)
        assert rows[0]["phase"] == "main"
        assert "vdp_roa" in capsys.readouterr().out

    def test_cd_method(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["solve", str(data_dir() / "vdp_roa.json"), "--method", "cd", "--out", str(out),
                     "--no-certify"]) == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["method"] == "cd" and rep["certificate"] is None

    def test_custom_toy(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["solve", str(TOY), "--out", str(out)]) == EXIT_OK
        rep = json.loads(out.read_text())
        assert rep["f"] == pytest.approx(2.0, abs=1e-6)
        assert rep["certificate"] is None

    def test_max_iter_is_solver_failure(self, tmp_path):
        assert main(["solve", str(TOY), "--max-iter", "1"]) == EXIT_SOLVER

    def test_locally_infeasible(self, tmp_path):
        raw = json.loads(TOY.read_text())
        raw.update(decisions={"s": {"role": "scalar"}}, objective="s*s", constraints=["-1 - s", "s"],
                   init={"method": "explicit", "values": {"s": "1"}})
        assert main(["solve", str(write_json(tmp_path / "inf.json", raw))]) == EXIT_INFEASIBLE

    def test_flags_override_config(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"hessian": "exact-mirrored", "max_iter": 40})
        out = tmp_path / "r.json"
        main(["solve", str(TOY), "--config", str(cfg), "--hessian", "damped-bfgs", "--out", str(out)])
        conf = json.loads(out.read_text())["config"]
        assert conf["hessian"] == "damped-bfgs" and conf["max_iter"] == 40

    def test_report_has_no_nan(self, tmp_path):
        pf = json.loads((data_dir() / "vdp_roa.json").read_text())
        pf["init"] = {"method": "negative-definite"}
        out = tmp_path / "r.json"
        code = main(["solve", str(write_json(tmp_path / "p.json", pf)), "--method", "cd", "--out", str(out)])
        assert code == EXIT_SOLVER
        text = out.read_text()
        assert "NaN" not in text
        assert json.loads(text)["f"] is None


class TestMalformedInput:
    def test_polynomial_file(self, tmp_path, capsys):
        polys = tmp_path / "p.txt"
        polys.write_text("x1^2 + 1\n# comment\nx1^2 + * x2\n")
        assert main(["violation", str(polys)]) == EXIT_INPUT
        err = capsys.readouterr().err
        assert "line 3, column 8" in err

    def test_problem_dynamics(self, tmp_path, capsys):
        raw = json.loads((data_dir() / "vdp_roa.json").read_text())
        raw["dynamics"][1] = "x1 - (x2"
        assert main(["solve", str(write_json(tmp_path / "p.json", raw))]) == EXIT_INPUT
        assert "column" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\n  \"kind\": \n}")
        assert main(["solve", str(bad)]) == EXIT_INPUT
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["solve", str(tmp_path / "nope.json")]) == EXIT_INPUT

    def test_bad_config_value(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"eta": 2.0})
        assert main(["solve", str(TOY), "--config", str(cfg)]) == EXIT_INPUT

    def test_violation_needs_one_source(self, tmp_path):
        assert main(["violation"]) == EXIT_INPUT

    def test_unknown_suite_method(self):
        assert main(["suite", "--methods", "sqsos,newton"]) == EXIT_INPUT


class TestViolationCommand:
    def test_csv(self, tmp_path):
        polys = tmp_path / "p.txt"
        polys.write_text("x1^2 + 1\n-x1^2\n")
        out = tmp_path / "v.csv"
        assert main(["violation", str(polys), "--out", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 6
        theta = {(r["source"], r["method"]): float(r["theta"]) for r in rows}
        assert theta[("line 1", "signed-distance")] == 0.0
        assert theta[("line 2", "projection")] == pytest.approx(1.0, abs=1e-6)

    def test_random_sweep(self, tmp_path):
        out = tmp_path / "v.csv"
        assert main(["violation", "--random", "2", "--nvars", "2,3", "--out", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 12
        assert {r["degree"] for r in rows} == {"6"}
        # strictly SOS inputs: every method reports zero
        assert all(float(r["theta"]) == 0.0 for r in rows)
        assert all(r["sampling_false_negative"] == "0" for r in rows if r["method"] == "sampling")


class TestSuite:
    def test_deterministic(self, suite_runs):
        a, b = suite_runs
        assert json.dumps(mask_timing(a), sort_keys=True) == json.dumps(mask_timing(b), sort_keys=True)

    def test_contents(self, suite_runs):
        rep = suite_runs[0]
        assert rep["schema"] == SUITE_SCHEMA and rep["seed"] == 7
        pairs = {(r["problem"], r["method"]) for r in rep["reports"]}
        assert len(pairs) == 8

    def test_golden(self, suite_runs):
        masked = mask_timing(suite_runs[0])
        if os.environ.get("SQSOS_REGEN_GOLDEN"):
            GOLDEN.parent.mkdir(exist_ok=True)
            GOLDEN.write_text(json.dumps(masked, indent=2, sort_keys=True) + "\n")
        same_shape(masked, json.loads(GOLDEN.read_text()))
