"""Acceptance gate: one test per criterion, at the stated tolerances.

Heavy solves are shared through a session-scoped suite; each test prints its
own pass/fail line so `pytest -v` reads as the acceptance checklist.
Criterion 12 is exercised end to end: the CLI verify-all mode runs twice in
subprocesses and the report files must be byte-identical.
"""

import json
import subprocess
import sys

import pytest

from affinelab.verify import VerificationSuite


@pytest.fixture(scope="module")
def suite():
    return VerificationSuite()


def _check(result):
    print(result.line(), flush=True)
    assert result.passed, f"{result.name}: {result.details}"
    return result


def test_criterion_01_mu_cubic(suite):
    r = _check(suite.criterion_01_mu_cubic())
    assert r.details["max_polynomial_residual"] < 1e-12
    assert r.details["max_closed_form_deviation"] < 1e-12


def test_criterion_02_supersolution_root(suite):
    r = _check(suite.criterion_02_supersolution_root())
    assert abs(r.details["r_sigma1_lambda10"] - 5.0) < 1e-12


def test_criterion_03_torus_solver(suite):
    r = _check(suite.criterion_03_torus_solver())
    for row in r.details.values():
        assert row["max_deviation"] < 1e-10
        assert row["max_iterations"] <= 25


def test_criterion_04_metric_asymptotics(suite):
    r = _check(suite.criterion_04_metric_asymptotics())
    assert -0.82 <= r.details["slope_m"] <= -0.52
    assert -0.48 <= r.details["slope_g"] <= -0.18
    assert r.details["upper_bound_max"] <= 0.5 + 1e-8


def test_criterion_05_torus_holonomy(suite):
    r = _check(suite.criterion_05_torus_holonomy())
    assert r.details["max_log_eigenvalue_error"] < 1e-6
    assert r.details["max_det_drift"] < 1e-8


def test_criterion_06_eigenvalue_brackets(suite):
    r = _check(suite.criterion_06_eigenvalue_brackets())
    assert r.details["max_rho_deviation"] <= 1e-6
    assert r.details["max_identity_deviation"] <= 1e-10


def test_criterion_07_contraction_machinery(suite):
    r = _check(suite.criterion_07_contraction_machinery())
    assert abs(r.details["certificate_factor"] - 0.020404) <= 1e-6
    assert r.details["picard_vs_rk_weighted"] < 1e-6
    assert r.details["zero_b_first_sweep_delta"] == 0.0


def test_criterion_08_column_growth(suite):
    r = _check(suite.criterion_08_column_growth())
    assert r.details["certified"]
    assert r.details["R_ratio_spread"] < 2.0


def test_criterion_09_char_poly(suite):
    r = _check(suite.criterion_09_char_poly())
    assert r.details["torus_dev1"] < 1e-8 and r.details["torus_dev2"] < 1e-8
    assert r.details["slope_dev1"] <= -0.18 and r.details["slope_dev2"] <= -0.18


def test_criterion_10_integrability(suite):
    r = _check(suite.criterion_10_integrability())
    assert r.details["solved_residual"] < 1e-8
    assert r.details["perturbed_residual"] > 1e-3
    assert r.details["separation"] >= 1e5


def test_criterion_11_surface(suite):
    r = _check(suite.criterion_11_surface())
    assert r.details["compatibility_residual"] < r.details["compatibility_bound"]
    assert r.details["det_invariant_deviation"] < 1e-6


def test_criterion_12_determinism(tmp_path):
    """verify-all run twice produces byte-identical reports (exit 0 both)."""
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run(
            [sys.executable, "-m", "affinelab.cli", "--mode", "verify-all",
             "--out", str(out)],
            capture_output=True, text=True, timeout=900)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        reports.append((out / "verify_report.json").read_bytes())
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert doc["all_passed"]
    assert len(doc["criteria"]) == 12
    print("criterion 12 determinism: PASS", flush=True)
