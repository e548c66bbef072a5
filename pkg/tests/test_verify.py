"""Tests for the inequality harness."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from degenpop.experiment import default_omega_inner
from degenpop.model import ControlRegion, DispersionCoefficient, ProblemSetup, Regime
from degenpop.presets import Scenario, reference_problem
from degenpop.verify import (
    ADJOINT_ORDER_MIN,
    ConvergenceStudy,
    EmptyEnsembleError,
    InequalityFamily,
    InequalityReport,
    NestingError,
    check_caccioppoli,
    check_carleman_global,
    check_carleman_local,
    check_hardy,
    check_observability,
    consistency_defect,
    drift_ok,
    hardy_discrete_terms,
    hardy_quadrature_ratio,
    manufactured_sample,
    refinement_drift,
    render_report,
)
from degenpop.weights import WeightKind, WeightRegimeError


def _report(lhs: tuple[float, ...], rhs: tuple[float, ...]) -> InequalityReport:
    return InequalityReport(
        family=InequalityFamily.DUALITY,
        parameter="trial",
        s_values=tuple(float(i) for i in range(len(lhs))),
        lhs=lhs,
        rhs=rhs,
        grid_tag="test",
        passed=True,
        criterion="none",
    )


# %% === Reports === #
def test_ratios_handle_vanishing_sides() -> None:
    report = _report((0.0, 1.0, 2.0), (0.0, 0.0, 4.0))
    assert report.ratios == (0.0, math.inf, 0.5)
    assert report.effective_constant == math.inf


def test_refinement_drift() -> None:
    coarse = _report((2.0,), (1.0,))
    fine = _report((3.0,), (1.0,))
    assert refinement_drift(coarse, fine) == pytest.approx(1.5)
    assert drift_ok(coarse, fine)
    assert refinement_drift(_report((0.0,), (1.0,)), _report((0.0,), (1.0,))) == 1.0
    assert refinement_drift(_report((0.0,), (1.0,)), fine) == math.inf


def test_render_report_lists_rows() -> None:
    text = render_report(_report((1.0, 2.0), (2.0, 4.0)))
    assert "duality" in text
    assert "PASS" in text
    assert "5.000000e-01" in text


@pytest.mark.parametrize(("finest", "passed"), [(0.5, True), (0.5175, False)])
def test_adjoint_agreement_needs_first_order(finest: float, passed: bool) -> None:
    study = ConvergenceStudy(
        name="adjoint_agreement",
        levels=("9x8x8", "17x16x16"),
        differences=(1.0, finest),
        threshold=ADJOINT_ORDER_MIN,
    )
    assert ADJOINT_ORDER_MIN == 1.0
    assert study.passed is passed


# %% === Hardy-Poincare === #
def test_hardy_reference_profile_has_unit_ratio() -> None:
    assert hardy_quadrature_ratio(1.0) == pytest.approx(1.0, rel=1e-8)
    x = np.linspace(0.0, 1.0, 401)
    numerator, denominator = hardy_discrete_terms(x * (1 - x), x)
    assert numerator / denominator == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("p", [0.55, 0.75, 1.0])
def test_hardy_discrete_sums_stay_below_four(p: float) -> None:
    x = np.linspace(0.0, 1.0, 401)
    numerator, denominator = hardy_discrete_terms(x**p * (1 - x), x)
    assert numerator <= 4 * denominator


def test_hardy_check_passes() -> None:
    report = check_hardy(test_family_size=10)
    assert report.passed
    assert len(report.lhs) == 10
    assert report.effective_constant < 4.0


def test_hardy_check_with_weighted_variant() -> None:
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 0.5)
    report = check_hardy(k, test_family_size=4)
    assert report.passed
    assert all(math.isfinite(r) for r in report.details["weighted_ratios"])


# %% === Carleman === #
@pytest.mark.parametrize(
    ("fixture", "variant"),
    [
        ("boundary_problem", WeightKind.VARPHI_BOUNDARY_0),
        ("interior_problem", WeightKind.GAMMA_INTERIOR),
        ("nondegenerate_problem", WeightKind.PHI_NONDEG),
        ("nondegenerate_problem", WeightKind.PSI_WEAK_A2),
    ],
)
def test_global_carleman_constant_is_finite(
    fixture: str, variant: WeightKind, request: pytest.FixtureRequest
) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    report = check_carleman_global(variant, problem)
    assert report.passed
    assert len(report.s_values) == 5
    assert all(lhs >= 0 for lhs in report.lhs)


def test_global_carleman_rejects_mismatched_weight(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(WeightRegimeError):
        check_carleman_global(WeightKind.PHI_NONDEG, boundary_problem)


def test_local_carleman_uses_regime_weight(interior_problem: ProblemSetup) -> None:
    report = check_carleman_local(None, interior_problem, s_values=[0.5, 1.0])
    assert report.family is InequalityFamily.CARLEMAN_LOCAL
    assert report.details["weight"] is WeightKind.GAMMA_INTERIOR
    assert report.passed


def test_manufactured_sample_consistency_improves(nondegenerate_problem: ProblemSetup) -> None:
    fine = reference_problem(Scenario.NONDEGENERATE, nx=33, nt=32)
    sample = manufactured_sample(nondegenerate_problem)
    coarse_defect = consistency_defect(nondegenerate_problem, sample)
    fine_defect = consistency_defect(fine, manufactured_sample(fine))
    assert fine_defect < coarse_defect


# %% === Observability === #
@pytest.mark.parametrize("fixture", ["boundary_problem", "interior_problem"])
def test_observability_constant_is_finite(fixture: str, request: pytest.FixtureRequest) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    report = check_observability(problem, ensemble_size=4)
    assert report.passed
    assert len(report.lhs) == 4
    assert report.details["T_tilde"] == pytest.approx(0.5)


def test_observability_needs_members(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(EmptyEnsembleError):
        check_observability(boundary_problem, ensemble_size=0)


def test_observability_constant_shrinks_with_larger_omega(boundary_problem: ProblemSetup) -> None:
    narrow = dataclasses.replace(boundary_problem, omega=ControlRegion.of((0.3, 0.6)))
    wide = dataclasses.replace(boundary_problem, omega=ControlRegion.of((0.2, 0.8)))
    narrow_report = check_observability(narrow, ensemble_size=4, seed=0)
    wide_report = check_observability(wide, ensemble_size=4, seed=0)
    assert wide_report.effective_constant <= narrow_report.effective_constant * (1 + 1e-12)


# %% === Caccioppoli === #
def test_caccioppoli_constant_is_finite(boundary_problem: ProblemSetup) -> None:
    inner = default_omega_inner(boundary_problem.omega)
    report = check_caccioppoli(boundary_problem, inner)
    assert report.passed
    assert len(report.s_values) == 3


def test_caccioppoli_needs_nested_regions(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(NestingError):
        check_caccioppoli(boundary_problem, ControlRegion.of((0.2, 0.5)))


def test_caccioppoli_rejects_degeneracy_in_omega(interior_problem: ProblemSetup) -> None:
    problem = dataclasses.replace(interior_problem, omega=ControlRegion.of((0.3, 0.7)))
    with pytest.raises(NestingError):
        check_caccioppoli(problem, ControlRegion.of((0.35, 0.45)))
