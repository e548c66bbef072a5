"""Tests for the forward and adjoint solvers."""

from __future__ import annotations

import numpy as np
import pytest

from degenpop.model import GridShapeError, ProblemSetup, Scheme, cell_weights, state_norm
from degenpop.pde import (
    Branch,
    DatumError,
    DiffusionOperator,
    Renewal,
    TrajectoryKind,
    assemble_diffusion,
    branch_labels,
    characteristics_adjoint,
    diffusion_step,
    energy_profile,
    solve_adjoint_transpose,
    solve_forward,
)
from degenpop.presets import sin2_bump
from degenpop.verify import (
    ADJOINT_ORDER_MIN,
    SPATIAL_ORDER_MIN,
    TEMPORAL_ORDER_MIN,
    adjoint_agreement,
    check_duality,
    check_energy_decay,
    spatial_order,
    temporal_order,
)


def _terminal_datum(problem: ProblemSetup) -> np.ndarray:
    lattice = problem.lattice
    age = sin2_bump(np.asarray(lattice.a), problem.delta, problem.A)
    return age[:, None] * np.sin(np.pi * np.asarray(lattice.x))[None, :] * problem.active


# %% === Operator === #
@pytest.mark.parametrize("fixture", ["boundary_problem", "interior_problem"])
def test_diffusion_operator_is_symmetric_in_weighted_product(
    fixture: str, request: pytest.FixtureRequest
) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    weights = cell_weights(problem.k, problem.lattice)
    op = assemble_diffusion(problem.k, np.full(problem.lattice.nx, 0.1), problem.lattice)
    assert op.weighted_symmetry_defect(weights) <= 1e-10


def test_batched_step_matches_single_slice(boundary_problem: ProblemSetup) -> None:
    lattice = boundary_problem.lattice
    op = assemble_diffusion(boundary_problem.k, np.full(lattice.nx, 0.1), lattice)
    u = np.sin(np.pi * np.asarray(lattice.x)) * boundary_problem.active
    single = diffusion_step(u, lattice.dt, op)
    batch = diffusion_step(np.stack([u, 2 * u]), lattice.dt, op)
    np.testing.assert_allclose(batch[0], single, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(batch[1], 2 * single, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("scheme", list(Scheme))
def test_diffusion_step_contracts_weighted_norm(
    interior_problem: ProblemSetup, scheme: Scheme
) -> None:
    lattice = interior_problem.lattice
    weights = cell_weights(interior_problem.k, lattice)
    op = assemble_diffusion(interior_problem.k, np.zeros(lattice.nx), lattice)
    u = np.sin(3 * np.pi * np.asarray(lattice.x)) * interior_problem.active
    stepped = diffusion_step(u, lattice.dt, op, scheme)
    assert np.sum(weights * stepped**2) < np.sum(weights * u**2)
    assert not np.any(stepped[[0, -1]])


def test_weak_interior_degenerate_row_is_pure_reaction(interior_problem: ProblemSetup) -> None:
    lattice = interior_problem.lattice
    weights = cell_weights(interior_problem.k, lattice)
    op = assemble_diffusion(interior_problem.k, np.full(lattice.nx, 0.7), lattice)
    matrix = op.matrix()
    i = lattice.space_index(0.5)
    assert weights[i] > 0
    np.testing.assert_array_equal(matrix[i, i - 1 : i + 2], [0.0, -0.7, 0.0])
    assert matrix[i - 1, i] == 0.0
    assert matrix[i + 1, i] == 0.0
    assert op.weighted_symmetry_defect(weights) <= 1e-10


def test_pure_reaction_step_matches_scalar_recurrence() -> None:
    nx, rate, dt = 9, 0.3, 0.125
    active = np.ones(nx, dtype=bool)
    active[[0, -1]] = False
    op = DiffusionOperator.from_coefficients(np.zeros(nx), np.full(nx, rate), active)
    u = np.sin(np.pi * np.linspace(0.0, 1.0, nx))
    u[[0, -1]] = 0.0
    stepped = diffusion_step(u, dt, op)
    np.testing.assert_allclose(stepped, u / (1 + rate * dt), rtol=1e-14, atol=1e-16)


# %% === Forward solver === #
def test_zero_datum_stays_zero(boundary_problem: ProblemSetup) -> None:
    zero = np.zeros(boundary_problem.lattice.slice_shape)
    trajectory = solve_forward(boundary_problem, y0=zero)
    assert trajectory.kind is TrajectoryKind.FORWARD
    assert trajectory.values.shape == (17, *boundary_problem.lattice.slice_shape)
    assert not np.any(trajectory.values)


def test_zero_renewal_empties_age_zero(boundary_problem: ProblemSetup) -> None:
    trajectory = solve_forward(boundary_problem, renewal=Renewal.ZERO)
    assert not np.any(trajectory.values[1:, 0, :])


def test_dirichlet_nodes_stay_zero(boundary_problem: ProblemSetup) -> None:
    trajectory = solve_forward(boundary_problem)
    assert not np.any(trajectory.values[:, :, 0])
    assert not np.any(trajectory.values[:, :, -1])
    np.testing.assert_array_equal(trajectory.at(boundary_problem.T), trajectory.final)


def test_forward_window_starts_at_given_time(boundary_problem: ProblemSetup) -> None:
    trajectory = solve_forward(boundary_problem, t_start=0.5)
    assert trajectory.n_start == 8
    assert trajectory.times[0] == pytest.approx(0.5)


def test_forward_rejects_control_of_wrong_shape(boundary_problem: ProblemSetup) -> None:
    with pytest.raises(GridShapeError):
        solve_forward(boundary_problem, f=np.zeros((3, 3, 3)))


def test_energy_profile_starts_at_initial_norm(boundary_problem: ProblemSetup) -> None:
    trajectory = solve_forward(boundary_problem)
    energy = energy_profile(trajectory, boundary_problem)
    initial = state_norm(boundary_problem.initial_state, boundary_problem)
    assert energy[0] == pytest.approx(initial**2)


@pytest.mark.parametrize(
    "fixture", ["boundary_problem", "interior_problem", "nondegenerate_problem"]
)
def test_energy_decays_without_renewal(fixture: str, request: pytest.FixtureRequest) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    report = check_energy_decay(problem)
    assert report.passed, report.details


# %% === Adjoint solvers === #
def test_adjoint_datum_must_vanish_at_maximal_age(boundary_problem: ProblemSetup) -> None:
    datum = np.ones(boundary_problem.lattice.slice_shape)
    with pytest.raises(DatumError):
        solve_adjoint_transpose(boundary_problem, datum)


@pytest.mark.parametrize("fixture", ["boundary_problem", "interior_problem"])
def test_duality_holds_to_rounding(fixture: str, request: pytest.FixtureRequest) -> None:
    problem: ProblemSetup = request.getfixturevalue(fixture)
    report = check_duality(problem, trials=4)
    assert report.passed, report.ratios


def test_duality_on_the_full_window(boundary_problem: ProblemSetup) -> None:
    report = check_duality(boundary_problem, trials=2, t_start=0.0)
    assert report.passed, report.ratios


def test_branch_labels_mark_terminal_branch(boundary_problem: ProblemSetup) -> None:
    labels = branch_labels(boundary_problem)
    lattice = boundary_problem.lattice
    assert labels.shape == (lattice.nt + 1, lattice.na + 1)
    # at t = T every age up to abar follows the terminal datum
    assert np.all(labels[-1, : lattice.age_index(boundary_problem.abar) + 1] == 0)
    assert len(Branch) == 3


def test_characteristics_adjoint_is_finite(boundary_problem: ProblemSetup) -> None:
    adjoint = characteristics_adjoint(boundary_problem, _terminal_datum(boundary_problem))
    assert adjoint.kind is TrajectoryKind.ADJOINT_CHARACTERISTICS
    assert np.all(np.isfinite(adjoint.values))
    np.testing.assert_allclose(adjoint.final, _terminal_datum(boundary_problem))


# %% === Convergence === #
@pytest.mark.slow
def test_temporal_order() -> None:
    study = temporal_order()
    assert study.observed_order >= TEMPORAL_ORDER_MIN, study.orders


@pytest.mark.slow
def test_spatial_order() -> None:
    study = spatial_order()
    assert study.observed_order >= SPATIAL_ORDER_MIN, study.orders


@pytest.mark.slow
def test_adjoint_solvers_agree_under_refinement() -> None:
    study = adjoint_agreement()
    assert study.differences[-1] < study.differences[0]
    assert study.observed_order >= ADJOINT_ORDER_MIN, study.orders
