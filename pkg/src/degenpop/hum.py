"""
Null control synthesis by the Hilbert uniqueness method.

The control is f = chi_omega v_g, where v_g is the adjoint state started from a terminal
datum g supported in the target ages delta < a < A. The optimal g minimizes

    J_eps(g) = 1/2 <Lambda g, g> + <b, g> + eps/2 |g|^2,

with Lambda the controllability Gramian and b the free terminal state on the target ages.
Every inner product is the weighted product of `degenpop.model.state_inner`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import attrs
import numpy as np
from loguru import logger
from tqdm import tqdm

from degenpop.config import global_settings
from degenpop.model import NumericalError, ProblemSetupError, Scheme, state_inner, state_norm
from degenpop.pde import (
    Propagator,
    Renewal,
    Trajectory,
    TrajectoryKind,
    check_terminal_datum,
    solve_adjoint_transpose,
    solve_forward,
)
from degenpop.presets import random_smooth_field

if TYPE_CHECKING:
    import numpy.typing as npt

    from degenpop.model import BoolArray, FloatArray, Lattice, ProblemSetup


# %% === Exceptions === #
class CGBreakdownError(NumericalError):
    """Raised when conjugate gradient meets a direction of nonpositive curvature."""

    def __init__(self, iteration: int, curvature: float) -> None:
        self.iteration = iteration
        self.curvature = curvature
        super().__init__(
            f"Conjugate gradient broke down at iteration {iteration}: "
            f"<p, (Lambda + eps) p> = {curvature:.3e} <= 0."
        )


class EnergyBoundError(NumericalError):
    """Raised when the zero-renewal phase increases the weighted norm of the state."""

    def __init__(self, initial: float, final: float) -> None:
        self.initial = initial
        self.final = final
        super().__init__(
            f"Zero-renewal phase increased the state norm from {initial:.6e} to {final:.6e}."
        )


# %% === Configuration and results === #
def _cg_tol_validator(inst: object, attribute: attrs.Attribute[float], value: float) -> None:
    del inst
    if not 0 < value < 1:
        msg = f"{attribute.name} must lie in (0, 1), got {value}"
        raise ValueError(msg)


@attrs.define(kw_only=True, frozen=True)
class HUMConfig:
    """
    Parameters of the control synthesis.

    Attributes:
        delta: Target age margin overriding the one of the problem.
        epsilon: Tikhonov parameter.
        cg_tol: Relative residual at which conjugate gradient stops.
        cg_max_iters: Iteration cap of conjugate gradient.
    """

    delta: float | None = None
    epsilon: float = attrs.field(
        default=global_settings.DEFAULT_EPSILON, validator=attrs.validators.ge(0.0)
    )
    cg_tol: float = attrs.field(default=global_settings.DEFAULT_CG_TOL, validator=_cg_tol_validator)
    cg_max_iters: int = attrs.field(
        default=global_settings.DEFAULT_CG_MAX_ITERS, validator=attrs.validators.ge(1)
    )


@dataclass(frozen=True, kw_only=True, eq=False)
class ControlResult:
    """
    Outcome of a control synthesis.

    Attributes:
        control: Control on the full time lattice, zero before `t_start` and outside omega.
        g_hat: Minimizing terminal datum.
        state: Controlled trajectory, from t = 0 in two-phase mode.
        t_start: Start of the control window.
        epsilon: Tikhonov parameter used.
        terminal_residual: Weighted norm of y(T) on the target ages.
        residual_outside_target: Weighted norm of y(T) on the other ages, for diagnosis only.
        control_norm: Norm of the control in L^2 of the window with weight 1/k.
        initial_norm: Weighted norm of the initial datum the ratio refers to.
        ratio: control_norm / initial_norm, 0 when the datum vanishes.
        j_history: Value of J_eps after each iteration, starting with J_eps(0) = 0.
        residual_history: Relative CG residual after each iteration.
        cg_iters: Number of CG iterations.
        converged: Whether the CG tolerance was reached.
    """

    control: FloatArray = field(repr=False)
    g_hat: FloatArray = field(repr=False)
    state: Trajectory = field(repr=False)
    t_start: float
    epsilon: float
    terminal_residual: float
    residual_outside_target: float
    control_norm: float
    initial_norm: float
    ratio: float
    j_history: tuple[float, ...]
    residual_history: tuple[float, ...]
    cg_iters: int
    converged: bool

    def summary(self) -> dict[str, Any]:
        """Scalars of the result, for reports."""
        return {
            "t_start": self.t_start,
            "epsilon": self.epsilon,
            "terminal_residual": self.terminal_residual,
            "residual_outside_target": self.residual_outside_target,
            "control_norm": self.control_norm,
            "initial_norm": self.initial_norm,
            "ratio": self.ratio,
            "cg_iters": self.cg_iters,
            "converged": self.converged,
            "j_final": self.j_history[-1],
        }


# %% === Target set === #
def target_mask(lattice: Lattice, delta: float) -> BoolArray:
    """Age nodes with delta_snapped < a < A."""
    j = np.arange(lattice.na + 1)
    return (j > lattice.age_floor_index(delta)) & (j < lattice.na)


def verify_null(trajectory: Trajectory, problem: ProblemSetup, delta: float | None = None) -> float:
    """Weighted norm of the final slice of a trajectory on the target ages."""
    mask = target_mask(problem.lattice, problem.delta if delta is None else delta)
    return state_norm(trajectory.final * mask[:, None], problem)


# %% === Operators === #
class HumOperator:
    """
    Gramian, free terminal state and control map of a problem on the window [t_start, T].

    Args:
        problem: Problem data.
        t_start: Start of the control window, a time node.
        delta: Target age margin, the one of the problem when omitted.
    """

    def __init__(
        self, problem: ProblemSetup, t_start: float = 0.0, delta: float | None = None
    ) -> None:
        self.problem = problem
        self.t_start = t_start
        self.n_start = problem.lattice.time_index(t_start)
        if not 0 <= self.n_start < problem.lattice.nt:
            raise ProblemSetupError(f"control window start {t_start} must lie in [0, T)")
        self.delta = problem.delta if delta is None else delta
        if not problem.T < self.delta < problem.A:
            raise ProblemSetupError(f"delta must lie in (T, A), got {self.delta}")
        self.propagator = Propagator(problem)
        self.target = target_mask(problem.lattice, self.delta)[:, None] & problem.active[None, :]

    def restrict(self, u: FloatArray) -> FloatArray:
        """Restriction of an (age x space) field to the target set."""
        return u * self.target

    def adjoint(self, g: npt.ArrayLike) -> Trajectory:
        """Adjoint trajectory on the window started from the terminal datum g."""
        datum = check_terminal_datum(self.problem, g)
        return solve_adjoint_transpose(
            self.problem,
            self.restrict(datum),
            t_start=self.t_start,
            propagator=self.propagator,
        )

    def control_from(self, adjoint: Trajectory) -> FloatArray:
        """Control chi_omega v on the window time nodes, zero on the first node."""
        control = adjoint.values * self.problem.omega_mask
        control[0] = 0.0
        return control

    def forward(self, y0: npt.ArrayLike, control: FloatArray | None = None) -> Trajectory:
        """Forward trajectory on the window."""
        return solve_forward(
            self.problem, control, y0, t_start=self.t_start, propagator=self.propagator
        )

    def gramian_apply(self, g: npt.ArrayLike) -> FloatArray:
        """Lambda g: terminal state on the target set driven by chi_omega v_g from zero."""
        control = self.control_from(self.adjoint(g))
        zero = np.zeros(self.problem.lattice.slice_shape)
        return self.restrict(self.forward(zero, control).final)

    def free_terminal(self, y0: npt.ArrayLike) -> FloatArray:
        """Terminal state on the target set of the uncontrolled run from y0."""
        return self.restrict(self.forward(y0).final)

    def control_energy(self, control: FloatArray) -> float:
        """Sum over the window of dt <f^n, f^n>."""
        dt = self.problem.lattice.dt
        return dt * sum(state_inner(f, f, self.problem) for f in control[1:])


def evaluate_J(
    g: npt.ArrayLike, problem: ProblemSetup, y0: npt.ArrayLike, *, t_start: float = 0.0
) -> float:
    """
    J(g) = 1/2 sum_n dt <chi_omega v_g, chi_omega v_g> + <y0, v_g(t_start)>.

    Values of g outside the target ages are ignored.

    Raises:
        DatumError: If g does not vanish at a = A.
    """
    operator = HumOperator(problem, t_start)
    adjoint = operator.adjoint(g)
    control = operator.control_from(adjoint)
    return 0.5 * operator.control_energy(control) + state_inner(
        np.asarray(y0, dtype=np.float64) * problem.active, adjoint.initial, problem
    )


def gramian_apply(g: npt.ArrayLike, problem: ProblemSetup, *, t_start: float = 0.0) -> FloatArray:
    """
    Apply the controllability Gramian to a terminal datum.

    Raises:
        DatumError: If g does not vanish at a = A.
    """
    return HumOperator(problem, t_start).gramian_apply(g)


# %% === Synthesis === #
def _conjugate_gradient(
    operator: HumOperator, b: FloatArray, config: HUMConfig, *, progress: bool
) -> tuple[FloatArray, list[float], list[float], bool]:
    problem = operator.problem
    epsilon = config.epsilon
    g = np.zeros_like(b)
    residual = -b
    direction = residual.copy()
    rr = state_inner(residual, residual, problem)
    b_norm = math.sqrt(rr)
    j_history = [0.0]
    residual_history = [1.0]
    if b_norm == 0:
        return g, j_history, [0.0], True

    converged = False
    with tqdm(
        total=config.cg_max_iters, desc="CG", unit="it", leave=False, disable=not progress
    ) as bar:
        for iteration in range(1, config.cg_max_iters + 1):
            applied = operator.gramian_apply(direction) + epsilon * direction
            curvature = state_inner(direction, applied, problem)
            if not curvature > 0:
                raise CGBreakdownError(iteration, curvature)
            step = rr / curvature
            g = operator.restrict(g + step * direction)
            residual = operator.restrict(residual - step * applied)
            j_history.append(0.5 * state_inner(g, b - residual, problem))
            rr_next = state_inner(residual, residual, problem)
            relative = math.sqrt(max(rr_next, 0.0)) / b_norm
            residual_history.append(relative)
            logger.debug(f"CG {iteration}: relative residual {relative:.3e}, J {j_history[-1]:.6e}")
            bar.update()
            if relative <= config.cg_tol:
                converged = True
                break
            direction = operator.restrict(residual + (rr_next / rr) * direction)
            rr = rr_next
    return g, j_history, residual_history, converged


def synthesize_control(
    problem: ProblemSetup,
    y0: npt.ArrayLike | None = None,
    config: HUMConfig | None = None,
    *,
    t_start: float = 0.0,
    progress: bool = False,
) -> ControlResult:
    """
    Compute the penalized HUM control driving y(T) to zero on the target set.

    Solves (Lambda + eps I) g = -b by conjugate gradient in the weighted inner product,
    sets f = chi_omega v_g on the window and re-runs the controlled forward solve.

    Args:
        problem: Problem data.
        y0: State at t_start, the initial datum of the problem when omitted.
        config: Synthesis parameters.
        t_start: Start of the control window, a time node before T.
        progress: Whether to show a progress bar over CG iterations.

    Raises:
        CGBreakdownError: If a direction of nonpositive curvature is met.
    """
    cfg = HUMConfig() if config is None else config
    operator = HumOperator(problem, t_start, cfg.delta)
    start = problem.initial_state if y0 is None else np.asarray(y0, dtype=np.float64)
    start = start * problem.active
    initial_norm = state_norm(start, problem)

    b = operator.free_terminal(start)
    logger.info(
        f"CG on the Gramian from t = {t_start:g}: |b| = {state_norm(b, problem):.3e}, "
        f"eps = {cfg.epsilon:.1e}"
    )
    g_hat, j_history, residual_history, converged = _conjugate_gradient(
        operator, b, cfg, progress=progress
    )
    cg_iters = len(j_history) - 1
    if converged:
        logger.info(f"CG converged in {cg_iters} iterations")
    else:
        logger.warning(
            f"CG reached the cap of {cfg.cg_max_iters} iterations "
            f"(relative residual {residual_history[-1]:.3e})"
        )

    window_control = operator.control_from(operator.adjoint(g_hat))
    state = operator.forward(start, window_control)
    lattice = problem.lattice
    control = np.zeros((lattice.nt + 1, *lattice.slice_shape))
    control[operator.n_start :] = window_control
    target = operator.target
    control_norm = math.sqrt(operator.control_energy(window_control))
    return ControlResult(
        control=control,
        g_hat=g_hat,
        state=state,
        t_start=t_start,
        epsilon=cfg.epsilon,
        terminal_residual=state_norm(state.final * target, problem),
        residual_outside_target=state_norm(state.final * ~target, problem),
        control_norm=control_norm,
        initial_norm=initial_norm,
        ratio=control_norm / initial_norm if initial_norm > 0 else 0.0,
        j_history=tuple(j_history),
        residual_history=tuple(residual_history),
        cg_iters=cg_iters,
        converged=converged,
    )


def two_phase_control(
    problem: ProblemSetup,
    y0: npt.ArrayLike | None = None,
    T_tilde: float | None = None,
    config: HUMConfig | None = None,
    *,
    progress: bool = False,
) -> ControlResult:
    """
    Control that vanishes on [0, T_tilde] and is synthesized on [T_tilde, T].

    Phase 1 runs the zero-renewal system with implicit Euler and no control; its final
    state starts the synthesis of phase 2. With T_tilde = 0 only phase 2 runs.

    Raises:
        ProblemSetupError: If T_tilde is not a time node in [0, T).
        EnergyBoundError: If phase 1 increases the weighted norm.
    """
    t_tilde = problem.T_tilde if T_tilde is None else T_tilde
    lattice = problem.lattice
    n_tilde = lattice.time_index(t_tilde)
    if not 0 <= n_tilde < lattice.nt:
        raise ProblemSetupError(f"T_tilde must lie in [0, T), got {t_tilde}")
    start = problem.initial_state if y0 is None else np.asarray(y0, dtype=np.float64)
    start = start * problem.active
    initial_norm = state_norm(start, problem)

    phase_one = solve_forward(
        problem,
        y0=start,
        t_end=t_tilde,
        renewal=Renewal.ZERO,
        propagator=Propagator(problem, Scheme.IMPLICIT_EULER),
    )
    handover = phase_one.final
    handover_norm = state_norm(handover, problem)
    if handover_norm > initial_norm * (1 + global_settings.ENERGY_TOL):
        raise EnergyBoundError(initial_norm, handover_norm)
    logger.info(
        f"Phase 1 on [0, {t_tilde:g}]: |u(T_tilde)| = {handover_norm:.3e} "
        f"<= |y0| = {initial_norm:.3e}"
    )

    phase_two = synthesize_control(
        problem, handover, config, t_start=t_tilde, progress=progress
    )
    values = np.concatenate([phase_one.values[:-1], phase_two.state.values])
    state = Trajectory(
        lattice=lattice,
        kind=TrajectoryKind.FORWARD,
        n_start=0,
        values=values,
        metadata={"two_phase": True, "t_tilde": t_tilde, "phase_one_norm": handover_norm},
    )
    return dataclasses.replace(
        phase_two,
        state=state,
        initial_norm=initial_norm,
        ratio=phase_two.control_norm / initial_norm if initial_norm > 0 else 0.0,
    )


def control_cost_ensemble(
    problem: ProblemSetup,
    initial_data: list[FloatArray],
    config: HUMConfig | None = None,
    *,
    t_start: float = 0.0,
) -> tuple[float, list[float]]:
    """
    Largest control_norm / |y0| over an ensemble of initial data.

    Zero data are skipped.

    Returns:
        The maximal ratio and the ratio of every member.
    """
    ratios = [
        synthesize_control(problem, y0, config, t_start=t_start).ratio
        for y0 in tqdm(initial_data, desc="control cost", leave=False)
        if state_norm(y0 * problem.active, problem) > 0
    ]
    return max(ratios, default=0.0), ratios


# %% === Structure checks === #
def _random_target_datum(operator: HumOperator, rng: np.random.Generator) -> FloatArray:
    problem = operator.problem
    field = random_smooth_field(
        rng, problem.lattice, problem.active, age_support=(operator.delta, problem.A)
    )
    return operator.restrict(field)


def gramian_defects(
    problem: ProblemSetup, trials: int = 5, *, t_start: float = 0.0, seed: int = 0
) -> dict[str, float]:
    """
    Largest symmetry and positivity defects of the Gramian over random target data.

    Symmetry: |<Lambda g1, g2> - <g1, Lambda g2>| / (|Lambda g1| |g2|).
    Positivity: max(0, -<Lambda g, g>) / (|Lambda g| |g|).
    """
    operator = HumOperator(problem, t_start)
    rng = np.random.default_rng(seed)
    symmetry = positivity = 0.0
    for _ in range(trials):
        g1 = _random_target_datum(operator, rng)
        g2 = _random_target_datum(operator, rng)
        lg1 = operator.gramian_apply(g1)
        lg2 = operator.gramian_apply(g2)
        scale = state_norm(lg1, problem) * state_norm(g2, problem)
        if scale > 0:
            defect = abs(state_inner(lg1, g2, problem) - state_inner(g1, lg2, problem))
            symmetry = max(symmetry, defect / scale)
        own = state_norm(lg1, problem) * state_norm(g1, problem)
        if own > 0:
            positivity = max(positivity, -state_inner(lg1, g1, problem) / own)
    return {"symmetry": symmetry, "positivity": positivity}


def gradient_defect(
    problem: ProblemSetup,
    y0: npt.ArrayLike | None = None,
    *,
    step: float = 1e-4,
    t_start: float = 0.0,
    seed: int = 0,
) -> float:
    """
    Relative gap between the directional derivative of J and its central difference.

    The exact gradient is Lambda g + b, with b the free terminal state on the target set.
    """
    operator = HumOperator(problem, t_start)
    rng = np.random.default_rng(seed)
    start = problem.initial_state if y0 is None else np.asarray(y0, dtype=np.float64)
    g = _random_target_datum(operator, rng)
    direction = _random_target_datum(operator, rng)
    gradient = operator.gramian_apply(g) + operator.free_terminal(start)
    exact = state_inner(gradient, direction, problem)
    central = (
        evaluate_J(g + step * direction, problem, start, t_start=t_start)
        - evaluate_J(g - step * direction, problem, start, t_start=t_start)
    ) / (2 * step)
    scale = max(abs(exact), abs(central))
    return abs(central - exact) / scale if scale > 0 else 0.0
