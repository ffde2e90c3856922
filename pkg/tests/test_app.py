"""
End-to-end tests of the command-line subcommands.
"""

import json

import numpy as np
import pandas as pd
import pytest
from openpyxl import load_workbook
from pytest import approx

from app import run_command
from processors.model_spec import parse_model


def _unit_gaussian():
    return {
        "version": "1",
        "vertices": [{"name": "x", "parents": [],
                      "cpd": {"kind": "linear_gaussian", "intercept": 0.0, "coefficients": [], "noise_sd": 1.0}}],
        "qoi": {"vertex": "x"},
    }


def _chain():
    """a -> b, with the QoI b"""
    return {
        "version": "1",
        "vertices": [
            {"name": "a", "parents": [],
             "cpd": {"kind": "linear_gaussian", "intercept": 1.0, "coefficients": [], "noise_sd": 1.0}},
            {"name": "b", "parents": ["a"],
             "cpd": {"kind": "linear_gaussian", "intercept": 3.0, "coefficients": [2.0], "noise_sd": 0.5}},
        ],
        "qoi": {"vertex": "b"},
        "budgets": {"a": 0.1, "b": 0.4},
    }


def _nonlinear():
    """Gamma root, Gaussian child, exponential QoI; small Monte-Carlo settings"""
    return {
        "version": "1",
        "vertices": [
            {"name": "g", "parents": [], "cpd": {"kind": "gamma", "shape": 9.0, "scale": 0.05}},
            {"name": "y", "parents": ["g"],
             "cpd": {"kind": "linear_gaussian", "intercept": 0.1, "coefficients": [0.5], "noise_sd": 0.1}},
            {"name": "q", "parents": ["y"], "cpd": {"kind": "deterministic", "expression": "exp(y)"}},
        ],
        "qoi": {"vertex": "q"},
        "mc": {"samples": 4000, "outer": 20, "inner": 500, "f_samples": 64, "seed": 11},
    }


@pytest.fixture
def write_model(tmp_path):
    def write(document, name="model.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return str(path)
    return write


def _run_json(argv, capsys):
    code = run_command(argv)
    captured = capsys.readouterr()
    assert code == 0, captured.err
    return json.loads(captured.out)


class TestIndexCommands:
    def test_unit_gaussian_index(self, write_model, capsys):
        payload = _run_json(["index", "--model", write_model(_unit_gaussian()), "--eta", "0.5"], capsys)
        entry = payload["indices"][0]
        assert entry["i_plus"] == approx(1.0, abs=1e-12)
        assert entry["i_minus"] == approx(-1.0, abs=1e-12)
        assert entry["backend"] == "gaussian_closed_form"

    def test_report_to_file(self, write_model, tmp_path, capsys):
        out = tmp_path / "reports" / "index.json"
        code = run_command(["index", "--model", write_model(_chain()), "--eta", "0.5", "--out", str(out)])
        assert code == 0
        assert capsys.readouterr().out == ""
        assert json.loads(out.read_text())["qoi_mean"] == approx(5.0)

    def test_tolerance_verdict(self, write_model, capsys):
        payload = _run_json(["index", "--model", write_model(_chain()), "--eta", "0.5",
                             "--tol", "0.5", "--tol-mode", "relative"], capsys)
        assessment = payload["indices"][0]["assessment"]
        assert assessment["ratio"] == approx(np.sqrt(4.25) / 5.0)
        assert assessment["passed"]

    def test_sensitivity_uses_document_budget(self, write_model, capsys):
        payload = _run_json(["sensitivity", "--model", write_model(_chain()), "--vertex", "a"], capsys)
        assert payload["indices"][0]["i_plus"] == approx(2.0 * np.sqrt(0.2))

    def test_builtin_xstar_on_preset(self, capsys):
        payload = _run_json(["sensitivity", "--model", "orr-tableB1", "--qoi", "xstar",
                             "--vertex", "s2", "--eta", "0.9173"], capsys)
        assert payload["indices"][0]["i_plus"] == approx(0.0932, abs=5e-5)
        assert payload["qoi_mean"] == approx(1.8855, abs=5e-4)


class TestRankAndStress:
    def test_rank_with_uniform_eta_and_workbook(self, write_model, tmp_path, capsys):
        xlsx = tmp_path / "rank.xlsx"
        payload = _run_json(["rank", "--model", write_model(_chain()), "--eta-uniform", "0.5",
                             "--xlsx", str(xlsx)], capsys)
        assert [row["vertex"] for row in payload["indices"]] == ["a", "b"]
        assert load_workbook(xlsx).sheetnames == ["Summary", "Indices"]

    def test_eta_file_overrides(self, write_model, tmp_path, capsys):
        etas = tmp_path / "eta.csv"
        etas.write_text("vertex,eta\na,0.0\nb,0.5\n")
        payload = _run_json(["rank", "--model", write_model(_chain()), "--eta-file", str(etas)], capsys)
        shares = {row["vertex"]: row["share"] for row in payload["indices"]}
        assert shares == {"b": 1.0, "a": 0.0}

    def test_monte_carlo_rank_is_reproducible(self, write_model, tmp_path):
        model = write_model(_nonlinear())
        outputs = []
        for n in range(2):
            out = tmp_path / f"rank{n}.json"
            assert run_command(["rank", "--model", model, "--eta-uniform", "0.2", "--out", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
        # q is deterministic and carries no index of its own
        assert {row["vertex"] for row in json.loads(outputs[0])["indices"]} <= {"g", "y"}

    def test_stress_curve_csv(self, write_model, tmp_path, capsys):
        curve = tmp_path / "curve.csv"
        payload = _run_json(["stress", "--model", write_model(_chain()), "--eta-max", "1.0",
                             "--eta-steps", "4", "--csv", str(curve)], capsys)
        assert len(payload["indices"]) == 5
        frame = pd.read_csv(curve)
        assert frame["eta"].tolist() == approx([0.0, 0.25, 0.5, 0.75, 1.0])
        assert frame["i_plus"].tolist() == approx(np.sqrt(2 * 4.25 * frame["eta"]).tolist())

    def test_stress_vertex_grid(self, write_model, capsys):
        payload = _run_json(["stress", "--model", write_model(_chain()), "--vertex", "b",
                             "--eta-grid", "0.1,0.4"], capsys)
        assert [row["i_plus"] for row in payload["indices"]] == approx([0.5 * np.sqrt(0.2), 0.5 * np.sqrt(0.8)])


class TestFitAndCorrect:
    def test_fit_emits_a_model_document(self, write_model, tmp_path, capsys):
        rng = np.random.default_rng(2)
        a = 1.0 + rng.standard_normal(3000)
        b = 3.0 + 2.0 * a + 0.5 * rng.standard_normal(3000)
        data = tmp_path / "data.csv"
        pd.DataFrame({"a": a, "b": b}).to_csv(data, index=False)
        code = run_command(["fit", "--model", write_model(_chain()), "--data", str(data)])
        text = capsys.readouterr().out
        assert code == 0
        document = parse_model(text)
        b_cpd = document.model.cpds[1]
        assert b_cpd.coefficients[0] == approx(2.0, abs=0.05)
        assert set(document.budgets) == {"a", "b"}
        assert all(0 <= eta < 0.05 for eta in document.budgets.values())

    def test_correct_check_two_point(self, write_model, capsys):
        payload = _run_json(["correct-check", "--model", write_model(_chain()), "--replace", "a=twopoint:1.0",
                             "--verify"], capsys)
        assert payload["case"] == "gaussian_mean_zero"
        assert payload["corrected"] == "a"
        assert payload["unchanged"] == ["b"]
        assert payload["diagnostics"]["verified_unchanged"] == {"b": 0.0}


class TestCatalogAndErrors:
    def test_catalog_round_trip(self, capsys):
        code = run_command(["catalog", "langmuir-illustrative"])
        text = capsys.readouterr().out
        assert code == 0
        document = parse_model(text)
        assert document.qoi_text() == "C_H"

    def test_catalog_listing(self, capsys):
        payload = _run_json(["catalog"], capsys)
        assert set(payload["presets"]) == {"orr-tableB1", "langmuir-illustrative", "markov-chain"}

    def test_cycle_exits_with_code_two(self, write_model, capsys):
        document = _chain()
        document["vertices"][0]["parents"] = ["b"]
        document["vertices"][0]["cpd"]["coefficients"] = [1.0]
        code = run_command(["index", "--model", write_model(document), "--eta", "0.5"])
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert code == 2
        assert error["error"] == "CycleDetected"

    def test_missing_eta(self, write_model, capsys):
        code = run_command(["index", "--model", write_model(_unit_gaussian())])
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "MissingBudget"

    def test_unknown_vertex(self, write_model, capsys):
        code = run_command(["sensitivity", "--model", write_model(_chain()), "--vertex", "zz", "--eta", "1"])
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "InvalidVertex"

    def test_zero_mean_relative_tolerance(self, write_model, capsys):
        code = run_command(["index", "--model", write_model(_unit_gaussian()), "--eta", "0.5", "--tol", "0.1"])
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ZeroMeanRelative"
