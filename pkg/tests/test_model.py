"""Tests for the coefficient, the lattice, the hypothesis probes and the weighted norms."""

from __future__ import annotations

import dataclasses
import itertools
import math

import numpy as np
import pytest

from degenpop.model import (
    ControlRegion,
    ControlRegionError,
    CoefficientError,
    DispersionCoefficient,
    HypothesisViolationError,
    Lattice,
    LatticeAlignmentError,
    NonFiniteDataError,
    OutOfUnitIntervalError,
    ProblemSetup,
    ProblemSetupError,
    Rates,
    Regime,
    eval_k,
    state_inner,
    state_norm,
    validate_hypotheses,
    weighted_norm,
    weighted_norm_aq,
)


# %% === Coefficient === #
def test_eval_k_boundary_power_law_vanishes_at_zero() -> None:
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 1.0)
    assert eval_k(k, 0.0) == 0.0
    assert eval_k(k, 0.25) == pytest.approx(0.25)


def test_eval_k_interior_power_law() -> None:
    k = DispersionCoefficient.power_law(Regime.INTERIOR_WEAK, 0.5, x0=0.5)
    assert eval_k(k, 0.75) == pytest.approx(0.5)
    assert eval_k(k, 0.5) == 0.0


def test_eval_k_affine() -> None:
    k = DispersionCoefficient.from_affine(1.0, 1.0)
    assert eval_k(k, 0.5) == pytest.approx(1.5)


@pytest.mark.parametrize("x", [-0.1, 1.5])
def test_eval_k_rejects_points_outside_unit_interval(x: float) -> None:
    k = DispersionCoefficient.from_affine(1.0, 1.0)
    with pytest.raises(OutOfUnitIntervalError):
        eval_k(k, x)


def test_coefficient_rejects_inconsistent_data() -> None:
    with pytest.raises(CoefficientError):
        DispersionCoefficient.power_law(Regime.INTERIOR_WEAK, 1.5, x0=0.5)
    with pytest.raises(CoefficientError):
        DispersionCoefficient.power_law(Regime.INTERIOR_WEAK, 0.5)
    with pytest.raises(CoefficientError):
        DispersionCoefficient.from_affine(1.0, -2.0)


def test_inverse_integral_of_square_root_law() -> None:
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 0.5)
    # integral of x^(-1/2) on [0, 1] is 2
    assert float(k.inverse_integral(0.0, 1.0)) == pytest.approx(2.0)


# %% === Lattice === #
def test_lattice_derives_age_steps_from_time_step() -> None:
    lattice = Lattice.build(T=1.0, A=2.0, nx=17, nt=16)
    assert lattice.na == 32
    assert lattice.da == pytest.approx(lattice.dt)
    assert lattice.slice_shape == (33, 17)
    assert lattice.tag == "17x32x16"


def test_lattice_rejects_misaligned_age_horizon() -> None:
    with pytest.raises(LatticeAlignmentError):
        Lattice.build(T=1.0, A=2.3, nx=5, nt=2)


def test_lattice_rejects_inconsistent_declared_age_steps() -> None:
    with pytest.raises(LatticeAlignmentError):
        Lattice.build(T=1.0, A=2.0, nx=5, nt=4, na=5)


def test_lattice_accepts_decimal_steps() -> None:
    lattice = Lattice.build(T=0.1, A=0.3, nx=5, nt=1)
    assert lattice.na == 3


# %% === Hypotheses === #
@pytest.fixture
def probe_lattice() -> Lattice:
    return Lattice.build(T=1.0, A=2.0, nx=65, nt=8)


def test_quadratic_boundary_law_fails_structural_bound(probe_lattice: Lattice) -> None:
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 2.0)
    report = validate_hypotheses(k, probe_lattice)
    assert report["structural_bound"].passed is False
    assert not report.passed


def test_interior_square_root_law_passes(probe_lattice: Lattice) -> None:
    k = DispersionCoefficient.power_law(Regime.INTERIOR_WEAK, 0.5, x0=0.5)
    report = validate_hypotheses(k, probe_lattice)
    assert report.passed
    assert report["degeneracy"].passed is True
    assert report["structural_bound"].passed is True


def test_nondegenerate_law_passes(probe_lattice: Lattice) -> None:
    k = DispersionCoefficient.from_affine(1.0, 1.0)
    report = validate_hypotheses(k, probe_lattice)
    assert report.passed
    assert set(report.to_dict()) == {"degeneracy", "structural_bound"}


def test_strict_setup_raises_on_failed_hypothesis(boundary_problem: ProblemSetup) -> None:
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 2.0)
    with pytest.raises(HypothesisViolationError):
        dataclasses.replace(boundary_problem, k=k, strict=True)


# %% === Weighted norms === #
def test_weighted_norm_of_constant_with_unit_coefficient() -> None:
    lattice = Lattice.build(T=1.0, A=2.0, nx=101, nt=1)
    k = DispersionCoefficient.from_affine(1.0, 0.0)
    assert weighted_norm(np.ones(lattice.nx), k, lattice) == pytest.approx(1.0, abs=lattice.h)


def test_weighted_norm_square_root_law() -> None:
    lattice = Lattice.build(T=1.0, A=2.0, nx=401, nt=1)
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 0.5)
    u = np.asarray(lattice.x)
    assert weighted_norm(u, k, lattice) == pytest.approx(math.sqrt(2 / 5), abs=1e-2)


@pytest.mark.parametrize("regime", [Regime.BOUNDARY_0, Regime.BOUNDARY_1])
def test_weighted_norm_converges_under_refinement(regime: Regime) -> None:
    k = DispersionCoefficient.power_law(regime, 0.5)
    exact = math.sqrt(16 / 315)
    errors = []
    for nx in (17, 33, 65, 129):
        lattice = Lattice.build(T=1.0, A=2.0, nx=nx, nt=1)
        x = np.asarray(lattice.x)
        errors.append(abs(weighted_norm(x * (1 - x), k, lattice) - exact))
    orders = [math.log2(coarse / fine) for coarse, fine in itertools.pairwise(errors)]
    assert min(orders) >= 1.0, orders


def test_weighted_norm_over_ages() -> None:
    lattice = Lattice.build(T=0.5, A=1.0, nx=201, nt=32)
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 0.5)
    u = np.asarray(lattice.a)[:, None] * np.asarray(lattice.x)[None, :]
    assert weighted_norm_aq(u, k, lattice) == pytest.approx(math.sqrt(2 / 15), abs=1e-2)


def test_weighted_norm_rejects_non_finite_data() -> None:
    lattice = Lattice.build(T=1.0, A=2.0, nx=9, nt=1)
    k = DispersionCoefficient.from_affine(1.0, 0.0)
    u = np.ones(lattice.nx)
    u[3] = np.nan
    with pytest.raises(NonFiniteDataError):
        weighted_norm(u, k, lattice)


# %% === Problem setup === #
def test_setup_rejects_delta_not_above_final_time(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(ProblemSetupError):
        dataclasses.replace(boundary_problem, delta=boundary_problem.T)


def test_setup_rejects_fertility_onset_after_final_time(boundary_problem: ProblemSetup) -> None:
    rates = Rates(mu=boundary_problem.rates.mu, beta=boundary_problem.rates.beta, abar=1.5)
    with pytest.raises(ProblemSetupError):
        dataclasses.replace(boundary_problem, rates=rates)


def test_setup_rejects_unobserved_interior_point(interior_problem: ProblemSetup) -> None:
    with pytest.raises(ProblemSetupError):
        dataclasses.replace(interior_problem, omega=ControlRegion.of((0.6, 0.8)))


def test_control_region_must_stay_inside_unit_interval() -> None:
    with pytest.raises(ControlRegionError):
        ControlRegion.of((0.0, 0.5))


def test_target_ages_exclude_margin_and_last_node(boundary_problem: ProblemSetup) -> None:
    lattice = boundary_problem.lattice
    ages = np.asarray(lattice.a)[boundary_problem.target_ages]
    assert ages.min() > boundary_problem.delta
    assert ages.max() < lattice.A
    assert boundary_problem.T_tilde == pytest.approx(0.5)


def test_state_norm_is_homogeneous(boundary_problem: ProblemSetup) -> None:
    u = boundary_problem.initial_state
    assert state_norm(2 * u, boundary_problem) == pytest.approx(2 * state_norm(u, boundary_problem))
    expected = state_norm(u, boundary_problem) ** 2
    assert state_inner(u, u, boundary_problem) == pytest.approx(expected)
