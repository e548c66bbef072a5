"""Tests for the HUM control synthesis."""

from __future__ import annotations

import numpy as np
import pytest

from degenpop.hum import (
    HUMConfig,
    control_cost_ensemble,
    evaluate_J,
    gradient_defect,
    gramian_apply,
    gramian_defects,
    synthesize_control,
    target_mask,
    two_phase_control,
    verify_null,
)
from degenpop.model import ProblemSetup, ProblemSetupError, state_inner
from degenpop.pde import solve_forward
from degenpop.presets import Scenario, reference_problem, sin2_bump

SMALL_RUN = HUMConfig(epsilon=1e-4, cg_max_iters=15)


def test_target_mask_selects_old_ages(boundary_problem: ProblemSetup) -> None:
    lattice = boundary_problem.lattice
    mask = target_mask(lattice, 1.5)
    np.testing.assert_array_equal(mask, boundary_problem.target_ages)
    assert not mask[-1]
    assert not mask[lattice.age_index(1.5)]


def test_config_rejects_tolerance_outside_unit_interval() -> None:
    with pytest.raises(ValueError, match="cg_tol"):
        HUMConfig(cg_tol=1.5)


def test_J_vanishes_at_zero(boundary_problem: ProblemSetup) -> None:
    zero = np.zeros(boundary_problem.lattice.slice_shape)
    assert evaluate_J(zero, boundary_problem, boundary_problem.initial_state) == 0.0


@pytest.mark.parametrize("fixture", ["boundary_problem", "interior_problem"])
def test_gramian_is_symmetric_and_nonnegative(
    fixture: str, request: pytest.FixtureRequest
) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    defects = gramian_defects(problem, trials=3, t_start=problem.T_tilde)
    assert defects["symmetry"] <= 1e-10
    assert defects["positivity"] <= 1e-12


def test_gradient_matches_central_difference(boundary_problem: ProblemSetup) -> None:
    assert gradient_defect(boundary_problem, step=1e-4, t_start=0.0) <= 1e-6


def test_zero_datum_needs_no_control(boundary_problem: ProblemSetup) -> None:
    zero = np.zeros(boundary_problem.lattice.slice_shape)
    result = synthesize_control(boundary_problem, zero, SMALL_RUN)
    assert result.converged
    assert result.cg_iters == 0
    assert not np.any(result.control)
    assert result.terminal_residual == 0.0
    assert result.ratio == 0.0


def test_cg_decreases_the_functional(boundary_problem: ProblemSetup) -> None:
    result = synthesize_control(boundary_problem, config=SMALL_RUN)
    history = np.asarray(result.j_history)
    assert history[0] == 0.0
    assert np.all(np.diff(history) <= 1e-12 * np.max(np.abs(history)))
    assert result.residual_history[-1] < 1.0


def test_control_lives_on_the_window_and_in_omega(boundary_problem: ProblemSetup) -> None:
    t_start = boundary_problem.T_tilde
    result = synthesize_control(boundary_problem, config=SMALL_RUN, t_start=t_start)
    n_start = boundary_problem.lattice.time_index(t_start)
    assert not np.any(result.control[: n_start + 1])
    assert not np.any(result.control[..., ~boundary_problem.omega_mask])
    assert result.control.shape == (17, *boundary_problem.lattice.slice_shape)


def test_control_reduces_the_target_norm(boundary_problem: ProblemSetup) -> None:
    free = verify_null(solve_forward(boundary_problem), boundary_problem)
    result = synthesize_control(boundary_problem, config=SMALL_RUN)
    assert result.terminal_residual < free
    assert verify_null(result.state, boundary_problem) == pytest.approx(result.terminal_residual)


def test_two_phase_control_vanishes_before_handover(boundary_problem: ProblemSetup) -> None:
    result = two_phase_control(boundary_problem, config=SMALL_RUN)
    n_tilde = boundary_problem.lattice.time_index(boundary_problem.T_tilde)
    assert not np.any(result.control[: n_tilde + 1])
    assert result.state.n_start == 0
    assert result.state.values.shape[0] == boundary_problem.lattice.nt + 1
    assert result.state.metadata["phase_one_norm"] <= result.initial_norm


def test_two_phase_rejects_handover_at_final_time(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(ProblemSetupError):
        two_phase_control(boundary_problem, T_tilde=boundary_problem.T, config=SMALL_RUN)


@pytest.mark.slow
@pytest.mark.parametrize("scenario", [Scenario.BOUNDARY, Scenario.INTERIOR])
def test_reference_control_reaches_the_target(scenario: Scenario) -> None:
    problem = reference_problem(scenario, nx=65, nt=32)
    result = synthesize_control(problem, config=HUMConfig(epsilon=1e-8))
    assert result.terminal_residual <= 1e-2 * result.initial_norm


def test_control_cost_skips_zero_data(boundary_problem: ProblemSetup) -> None:
    zero = np.zeros(boundary_problem.lattice.slice_shape)
    worst, ratios = control_cost_ensemble(
        boundary_problem, [zero, boundary_problem.initial_state], SMALL_RUN, t_start=0.5
    )
    assert len(ratios) == 1
    assert worst == ratios[0]
    assert 0 < worst < np.inf


def test_gramian_is_linear_and_positive(boundary_problem: ProblemSetup) -> None:
    lattice = boundary_problem.lattice
    age = sin2_bump(np.asarray(lattice.a), boundary_problem.delta, boundary_problem.A)
    g = age[:, None] * np.sin(np.pi * np.asarray(lattice.x))[None, :] * boundary_problem.active
    image = gramian_apply(g, boundary_problem)
    np.testing.assert_allclose(gramian_apply(2 * g, boundary_problem), 2 * image, rtol=1e-12)
    assert state_inner(image, g, boundary_problem) > 0
    assert not np.any(gramian_apply(np.zeros_like(g), boundary_problem))
