import math

import numpy as np
import pytest

from distcert.certify import ProblemClass, certify_rate
from distcert.algorithms import catalog
from distcert.svl import design
from distcert.tuning import (CSV_HEADER, PENALTY, RateCurve, RateObjective, UncertifiableEverywhereError,
                             curves_to_csv, rate_curve, tune_alpha, tune_alpha_mu)

PC = ProblemClass(1.0, 10.0, 0.3)


def test_svl_alpha_tuning_recovers_gradient_descent():
    res = tune_alpha("SVL", ProblemClass(1.0, 10.0, 0.0))
    assert res.alpha == pytest.approx(2 / 11, rel=5e-3)
    assert res.rho == pytest.approx(9 / 11, abs=1e-3)


def test_extra_tuned_rate_respects_lower_bound():
    res = tune_alpha("EXTRA", PC)
    assert 9 / 11 - 1e-6 <= res.rho < 1.0
    assert res.status == "ok" and res.evaluations > 0


def test_extra_tuned_alpha_is_locally_optimal():
    res = tune_alpha("EXTRA", PC)
    for a in (res.alpha * 0.97, res.alpha * 1.03):
        rho = certify_rate(catalog("EXTRA", a, 1.0, m=1.0, L=10.0), PC, tol=1e-6)[0]
        assert rho >= res.rho - 1e-4


def test_objective_penalizes_bad_points():
    f = RateObjective("EXTRA", PC)
    assert f(-1.0) == PENALTY
    assert f(float("nan")) == PENALTY
    assert f(50.0) == PENALTY
    assert f.evaluations == 3


def test_uncertifiable_everywhere():
    with pytest.raises(UncertifiableEverywhereError):
        tune_alpha("EXTRA", PC, bracket=(5.0, 10.0), grid=4)


def test_bad_bracket_rejected():
    with pytest.raises(ValueError):
        tune_alpha("EXTRA", PC, bracket=(0.2, 0.1))


def test_degenerate_simplex_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        tune_alpha_mu("EXTRA", PC, init_simplex=[[0.1, 1.0], [0.2, 1.0], [0.3, 1.0]])
    with pytest.raises(ValueError):
        tune_alpha_mu("EXTRA", PC, init_simplex=[[0.1, 1.0], [-0.2, 1.0], [0.3, 2.0]])


def test_svl_joint_tuning_returns_design():
    res = tune_alpha_mu("SVL", PC)
    d = design(PC)
    assert res.alpha == d.alpha and res.rho == d.rho and res.mu is None


@pytest.mark.slow
def test_joint_tuning_no_worse_than_alpha_only():
    pc = ProblemClass(1.0, 10.0, 0.6)
    a_only = tune_alpha("DIGing", pc)
    joint = tune_alpha_mu("DIGing", pc, restarts=2, maxfev=40)
    assert joint.rho <= a_only.rho + 1e-4


def test_rate_curve_validation():
    with pytest.raises(ValueError):
        rate_curve(["SVL"], 10.0, [0.3, 1.0])
    with pytest.raises(ValueError):
        rate_curve(["SVL"], 10.0, [0.6, 0.3])


def test_rate_curve_svl_and_csv(tmp_path):
    curves = rate_curve(["SVL"], 10.0, [0.0, 0.5])
    assert curves[0].points[0][1] == pytest.approx(9 / 11, abs=1e-9)
    text = curves_to_csv(curves, tmp_path / "c.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1].split(",")[:3] == ["SVL", "10", "0"]
    assert lines[1].endswith(",ok")
    assert (tmp_path / "c.csv").read_text() == text


def test_csv_records_failures():
    c = RateCurve("EXTRA", 10.0, [(0.3, math.nan, math.nan, None, "uncertifiable")])
    row = curves_to_csv([c]).splitlines()[1].split(",")
    assert row[3] == "nan" and row[5] == "" and row[6] == "uncertifiable"
