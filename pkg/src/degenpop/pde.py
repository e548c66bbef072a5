"""
Discrete solvers of the age-structured system and of its adjoint.

One forward step from t_n to t_{n+1} is, in this order:

1. transport: y(a_j) <- y(a_{j-1}), the value leaving at a = A is dropped,
2. renewal: y(a_0) <- trapezoid rule of beta * y over ages (or 0),
3. diffusion of every age slice with the theta-scheme, then `dt * f` is added.

The adjoint solver applies the exact transpose of this map with respect to the weighted
inner product of `degenpop.model.state_inner`, so discrete duality holds to round-off.
A characteristics solver provides an independent discretization of the adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger
from scipy import linalg

from degenpop.config import global_settings
from degenpop.model import (
    NODE_TOL,
    DataError,
    GridShapeError,
    NumericalError,
    Scheme,
    _check_finite,
    active_mask,
    cell_weights,
    state_norm,
)

if TYPE_CHECKING:
    import numpy.typing as npt

    from degenpop.model import (
        BoolArray,
        DispersionCoefficient,
        FloatArray,
        Lattice,
        ProblemSetup,
    )


# %% === Exceptions === #
class DatumError(DataError):
    """Raised when an adjoint terminal datum does not vanish at the maximal age."""

    def __init__(self, max_abs: float) -> None:
        self.max_abs = max_abs
        super().__init__(
            f"Adjoint terminal data must vanish at a = A, got max |v_T(A, .)| = {max_abs:.3e}."
        )


class FixedPointError(NumericalError):
    """Raised when the age-0 trace iteration of the characteristics solver does not converge."""

    def __init__(self, iterations: int, change: float) -> None:
        self.iterations = iterations
        self.change = change
        super().__init__(
            f"Age-0 trace did not converge after {iterations} sweeps "
            f"(last sup-change {change:.3e} > {global_settings.FIXED_POINT_TOL:.1e})."
        )


class Renewal(StrEnum):
    """Age-0 boundary law."""

    INTEGRAL = "integral"
    ZERO = "zero"


class TrajectoryKind(StrEnum):
    """System a trajectory solves."""

    FORWARD = "forward"
    ADJOINT_TRANSPOSE = "adjoint_transpose"
    ADJOINT_CHARACTERISTICS = "adjoint_characteristics"


# %% === Diffusion operator === #
@dataclass(frozen=True, kw_only=True)
class DiffusionOperator:
    """
    Tridiagonal operator u -> c_i (u_{i+1} - 2 u_i + u_{i-1}) - mu_i u_i.

    Arrays have shape (..., nx) and carry one operator per leading index (one per age
    slice). `lower[..., i]` multiplies u_{i-1} and `upper[..., i]` multiplies u_{i+1}.
    Dirichlet rows are zero, so the implicit systems keep those nodes unchanged.
    """

    lower: FloatArray = field(repr=False)
    diag: FloatArray = field(repr=False)
    upper: FloatArray = field(repr=False)

    @classmethod
    def from_coefficients(
        cls, coefficients: FloatArray, mu: npt.ArrayLike, active: BoolArray
    ) -> DiffusionOperator:
        """
        Assemble the operator from the stencil coefficients c_i and death rates.

        Interior nodes that are inactive or have c_i = 0 (a degenerate node) keep a pure
        reaction row and are decoupled from their neighbours.
        """
        c = np.asarray(coefficients, dtype=np.float64)
        mu_arr = np.asarray(mu, dtype=np.float64)
        nx = c.shape[-1]
        decoupled = ~active | (c == 0)
        decoupled[[0, -1]] = False
        coupled = active & ~decoupled
        lower = np.zeros(nx)
        upper = np.zeros(nx)
        lower[1:] = np.where(coupled[1:] & ~decoupled[:-1], c[1:], 0.0)
        upper[:-1] = np.where(coupled[:-1] & ~decoupled[1:], c[:-1], 0.0)
        diag = np.where(coupled, -2 * c - mu_arr, np.where(decoupled, -mu_arr, 0.0))
        shape = np.broadcast_shapes(diag.shape, lower.shape)
        return cls(
            lower=np.broadcast_to(lower, shape).copy(),
            diag=np.broadcast_to(diag, shape).copy(),
            upper=np.broadcast_to(upper, shape).copy(),
        )

    def apply(self, u: npt.ArrayLike) -> FloatArray:
        """Operator applied to `u` along its last axis."""
        values = np.asarray(u, dtype=np.float64)
        out = self.diag * values
        out[..., 1:] += self.lower[..., 1:] * values[..., :-1]
        out[..., :-1] += self.upper[..., :-1] * values[..., 1:]
        return out

    def matrix(self) -> FloatArray:
        """Dense matrix of a single-slice operator."""
        if self.diag.ndim != 1:
            msg = "matrix() is only defined for a single slice"
            raise ValueError(msg)
        return np.diag(self.diag) + np.diag(self.lower[1:], -1) + np.diag(self.upper[:-1], 1)

    def weighted_symmetry_defect(self, weights: FloatArray) -> float:
        """Largest entry of |D Op - (D Op)^T| on the nodes of positive weight."""
        keep = weights > 0
        weighted = (weights[:, None] * self.matrix())[np.ix_(keep, keep)]
        return float(np.max(np.abs(weighted - weighted.T), initial=0.0))


def diffusion_coefficients(k: DispersionCoefficient, lattice: Lattice) -> FloatArray:
    """
    Stencil coefficients c_i = 1 / (h w_i), i.e. the harmonic cell average of k over h^2.

    The cell weights w_i are those of the weighted norm, which makes `D Op` symmetric.
    Nodes of zero weight and the interior degeneracy node, where k vanishes, get c_i = 0.
    """
    weights = cell_weights(k, lattice)
    with np.errstate(divide="ignore"):
        c = np.where(weights > 0, 1.0 / (lattice.h * weights), 0.0)
    if k.regime.is_interior and k.degeneracy_point is not None:
        c[lattice.space_index(k.degeneracy_point)] = 0.0
    return c


def assemble_diffusion(
    k: DispersionCoefficient,
    mu_slice: npt.ArrayLike,
    lattice: Lattice,
    *,
    active: BoolArray | None = None,
) -> DiffusionOperator:
    """
    Assemble the diffusion-reaction operator for death rates sampled at the space nodes.

    Args:
        k: Diffusion coefficient.
        mu_slice: Death rates, shape (nx,) or (na + 1, nx).
        lattice: Lattice of the problem.
        active: Nodes carrying unknowns; derived from k when omitted.
    """
    mask = active_mask(k, lattice) if active is None else active
    return DiffusionOperator.from_coefficients(diffusion_coefficients(k, lattice), mu_slice, mask)


# %% === Tridiagonal solves === #
@dataclass(frozen=True, kw_only=True)
class _ThomasFactors:
    """Forward-elimination factors of a batch of tridiagonal matrices."""

    sub: FloatArray
    sup_prime: FloatArray
    inv_pivot: FloatArray

    @classmethod
    def factor(cls, sub: FloatArray, diag: FloatArray, sup: FloatArray) -> _ThomasFactors:
        n = diag.shape[-1]
        sup_prime = np.zeros_like(diag)
        inv_pivot = np.zeros_like(diag)
        inv_pivot[..., 0] = 1.0 / diag[..., 0]
        sup_prime[..., 0] = sup[..., 0] * inv_pivot[..., 0]
        for i in range(1, n):
            pivot = diag[..., i] - sub[..., i] * sup_prime[..., i - 1]
            inv_pivot[..., i] = 1.0 / pivot
            sup_prime[..., i] = sup[..., i] * inv_pivot[..., i]
        return cls(sub=sub, sup_prime=sup_prime, inv_pivot=inv_pivot)

    def solve(self, rhs: FloatArray) -> FloatArray:
        n = rhs.shape[-1]
        d = np.empty_like(rhs)
        d[..., 0] = rhs[..., 0] * self.inv_pivot[..., 0]
        for i in range(1, n):
            d[..., i] = (rhs[..., i] - self.sub[..., i] * d[..., i - 1]) * self.inv_pivot[..., i]
        for i in range(n - 2, -1, -1):
            d[..., i] -= self.sup_prime[..., i] * d[..., i + 1]
        return d


def _implicit_matrix(
    op: DiffusionOperator, dt: float, theta: float
) -> tuple[FloatArray, FloatArray, FloatArray]:
    return -theta * dt * op.lower, 1.0 - theta * dt * op.diag, -theta * dt * op.upper


def diffusion_step(
    u: npt.ArrayLike, dt: float, op: DiffusionOperator, scheme: Scheme = Scheme.IMPLICIT_EULER
) -> FloatArray:
    """
    One theta-scheme step (I - theta dt Op) u+ = (I + (1 - theta) dt Op) u.

    Single slices are solved with a banded LU, batches of slices with a vectorized Thomas
    sweep. The implicit matrix is diagonally dominant for dt > 0 and mu >= 0.
    """
    values = np.asarray(u, dtype=np.float64)
    theta = scheme.theta
    rhs = values + (1 - theta) * dt * op.apply(values) if theta < 1 else values.copy()
    sub, diag, sup = _implicit_matrix(op, dt, theta)
    if values.ndim == 1 and diag.ndim == 1:
        banded = np.zeros((3, diag.size))
        banded[0, 1:] = sup[:-1]
        banded[1] = diag
        banded[2, :-1] = sub[1:]
        return linalg.solve_banded((1, 1), banded, rhs)
    sub, diag, sup = np.broadcast_arrays(sub, diag, sup)
    return _ThomasFactors.factor(sub, diag, sup).solve(rhs)


# %% === Trajectories === #
@dataclass(frozen=True, kw_only=True, eq=False)
class Trajectory:
    """
    Sequence of (age x space) slices on consecutive time nodes.

    Attributes:
        lattice: Lattice of the run.
        kind: System solved.
        n_start: Global index of the first time slice.
        values: Array of shape (n_slices, na + 1, nx), read-only.
        metadata: Scalars describing the run (inputs, iteration counts).
    """

    lattice: Lattice
    kind: TrajectoryKind
    n_start: int
    values: FloatArray = field(repr=False)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values.flags.writeable = False

    @property
    def n_end(self) -> int:
        """Global index of the last time slice."""
        return self.n_start + self.values.shape[0] - 1

    @property
    def times(self) -> FloatArray:
        """Time of every slice."""
        return np.asarray(self.lattice.t[self.n_start : self.n_end + 1])

    @property
    def initial(self) -> FloatArray:
        """First slice."""
        return self.values[0]

    @property
    def final(self) -> FloatArray:
        """Last slice."""
        return self.values[-1]

    def at_index(self, n: int) -> FloatArray:
        """Slice at global time index n."""
        if not self.n_start <= n <= self.n_end:
            msg = f"time index {n} outside [{self.n_start}, {self.n_end}]"
            raise IndexError(msg)
        return self.values[n - self.n_start]

    def at(self, t: float) -> FloatArray:
        """Slice at time t, which must be a lattice node."""
        return self.at_index(self.lattice.time_index(t))


# %% === Propagation === #
class Propagator:
    """
    One-step maps of a problem, with cached operators and factorizations.

    Args:
        problem: Problem data.
        scheme: Diffusion scheme, the one of the problem when omitted.
    """

    def __init__(self, problem: ProblemSetup, scheme: Scheme | None = None) -> None:
        self.problem = problem
        self.lattice = problem.lattice
        self.scheme = problem.scheme if scheme is None else scheme
        self.active = problem.active
        self.coefficients = diffusion_coefficients(problem.k, self.lattice)
        self.beta = problem.rates.beta_grid(self.lattice) * self.active
        weights = np.full(self.lattice.na + 1, self.lattice.da)
        weights[0] = 0.0
        weights[-1] = self.lattice.da / 2
        self.renewal_weights = weights
        self._factors: dict[int, tuple[DiffusionOperator, _ThomasFactors]] = {}

    def mu_time(self, n: int) -> float:
        """Time at which mu is sampled for the step from t_n to t_{n+1}."""
        t = self.lattice.t
        if self.scheme is Scheme.IMPLICIT_EULER:
            return float(t[n + 1])
        return float(t[n] + self.lattice.dt / 2)

    def operator(self, n: int) -> DiffusionOperator:
        """Diffusion-reaction operator of the step from t_n to t_{n+1}."""
        return self._step_factors(n)[0]

    def _step_factors(self, n: int) -> tuple[DiffusionOperator, _ThomasFactors]:
        cached = self._factors.get(n)
        if cached is None:
            mu = self.problem.rates.mu_slice(self.mu_time(n), self.lattice)
            op = DiffusionOperator.from_coefficients(self.coefficients, mu, self.active)
            sub, diag, sup = _implicit_matrix(op, self.lattice.dt, self.scheme.theta)
            cached = (op, _ThomasFactors.factor(sub, diag, sup))
            self._factors[n] = cached
        return cached

    def diffuse(self, u: FloatArray, n: int) -> FloatArray:
        """Diffusion step of every age slice over [t_n, t_{n+1}]."""
        op, factors = self._step_factors(n)
        theta = self.scheme.theta
        rhs = u + (1 - theta) * self.lattice.dt * op.apply(u) if theta < 1 else u
        return factors.solve(rhs)

    def shift(self, y: FloatArray, renewal: Renewal) -> FloatArray:
        """Transport by one age step followed by the renewal law."""
        z = np.zeros_like(y)
        z[1:] = y[:-1]
        if renewal is Renewal.INTEGRAL:
            z[0] = np.sum(self.renewal_weights[:, None] * self.beta * z, axis=0)
        return z

    def shift_adjoint(self, w: FloatArray, renewal: Renewal) -> FloatArray:
        """Transpose of `shift` in the weighted inner product."""
        out = np.zeros_like(w)
        out[:-1] = w[1:]
        if renewal is Renewal.INTEGRAL:
            out[:-1] += (self.renewal_weights[1:, None] * self.beta[1:]) * w[0][None, :]
        return out

    def forward_step(
        self, y: FloatArray, n: int, renewal: Renewal, source: FloatArray | None = None
    ) -> FloatArray:
        """State at t_{n+1} from the state at t_n and the source at t_{n+1}."""
        out = self.diffuse(self.shift(y, renewal), n)
        if source is not None:
            out += self.lattice.dt * source * self.problem.omega_mask
        return out

    def adjoint_step(self, w: FloatArray, n: int, renewal: Renewal) -> FloatArray:
        """Adjoint state at t_n from the adjoint state at t_{n+1}."""
        return self.shift_adjoint(self.diffuse(w, n), renewal)


def _window(lattice: Lattice, t_start: float, t_end: float | None) -> tuple[int, int]:
    n0 = lattice.time_index(t_start)
    n1 = lattice.nt if t_end is None else lattice.time_index(t_end)
    if not 0 <= n0 <= n1 <= lattice.nt:
        msg = f"invalid time window [{t_start}, {t_end}] on [0, {lattice.T}]"
        raise DataError(msg)
    return n0, n1


def _slice_field(
    name: str, values: npt.ArrayLike, expected: tuple[int, ...], active: BoolArray
) -> FloatArray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != expected:
        raise GridShapeError(name, arr.shape, expected)
    _check_finite(arr, name)
    return arr * active


def solve_forward(
    problem: ProblemSetup,
    f: npt.ArrayLike | None = None,
    y0: npt.ArrayLike | None = None,
    *,
    t_start: float = 0.0,
    t_end: float | None = None,
    renewal: Renewal = Renewal.INTEGRAL,
    propagator: Propagator | None = None,
) -> Trajectory:
    """
    Solve the forward system on the time window [t_start, t_end].

    Args:
        problem: Problem data.
        f: Control on the window time nodes, shape (n_slices, na + 1, nx); the first slice
            is not used and values outside omega are ignored. None means no control.
        y0: State at t_start, the initial datum of the problem when omitted.
        t_start: Start of the window, a time node.
        t_end: End of the window, a time node, T when omitted.
        renewal: Age-0 boundary law.
        propagator: Precomputed one-step maps.

    Returns:
        The trajectory on every time node of the window.

    Raises:
        LatticeAlignmentError: If the window ends are not time nodes.
        GridShapeError: If f or y0 do not match the lattice.
        NonFiniteDataError: If f or y0 have non-finite values.
    """
    prop = Propagator(problem) if propagator is None else propagator
    lattice = problem.lattice
    n0, n1 = _window(lattice, t_start, t_end)
    shape = lattice.slice_shape
    state = _slice_field(
        "y0", problem.initial_state if y0 is None else y0, shape, problem.active
    )
    source = None
    if f is not None:
        source = _slice_field("f", f, (n1 - n0 + 1, *shape), problem.active)

    values = np.empty((n1 - n0 + 1, *shape))
    values[0] = state
    for n in range(n0, n1):
        step_source = None if source is None else source[n + 1 - n0]
        state = prop.forward_step(state, n, renewal, step_source)
        values[n + 1 - n0] = state
    return Trajectory(
        lattice=lattice,
        kind=TrajectoryKind.FORWARD,
        n_start=n0,
        values=values,
        metadata={
            "renewal": str(renewal),
            "scheme": str(prop.scheme),
            "controlled": f is not None,
        },
    )


def check_terminal_datum(problem: ProblemSetup, v_T: npt.ArrayLike) -> FloatArray:
    """
    Validate an adjoint terminal datum and project it onto the active nodes.

    Raises:
        GridShapeError: If v_T does not match an (age x space) slice.
        DatumError: If v_T does not vanish at a = A.
    """
    datum = _slice_field("v_T", v_T, problem.lattice.slice_shape, problem.active)
    top = float(np.max(np.abs(datum[-1])))
    if top > 0:
        raise DatumError(top)
    return datum


def solve_adjoint_transpose(
    problem: ProblemSetup,
    v_T: npt.ArrayLike,
    *,
    t_start: float = 0.0,
    renewal: Renewal = Renewal.INTEGRAL,
    propagator: Propagator | None = None,
) -> Trajectory:
    """
    Backward propagation by the exact transpose of the forward step.

    The returned slices satisfy, for any forward run on [t_start, T],
    <y(T), v_T> = <y(t_start), v(t_start)> + sum_n dt <f^n, v^n>.

    Raises:
        DatumError: If v_T does not vanish at a = A.
    """
    prop = Propagator(problem) if propagator is None else propagator
    lattice = problem.lattice
    n0, n1 = _window(lattice, t_start, None)
    state = check_terminal_datum(problem, v_T)
    values = np.empty((n1 - n0 + 1, *lattice.slice_shape))
    values[-1] = state
    for n in range(n1 - 1, n0 - 1, -1):
        state = prop.adjoint_step(state, n, renewal)
        values[n - n0] = state
    return Trajectory(
        lattice=lattice,
        kind=TrajectoryKind.ADJOINT_TRANSPOSE,
        n_start=n0,
        values=values,
        metadata={"renewal": str(renewal), "scheme": str(prop.scheme)},
    )


# %% === Characteristics === #
class Branch(StrEnum):
    """Branch of the characteristic representation of the adjoint state."""

    TERMINAL = "terminal"
    ONSET = "onset"
    OUTFLOW = "outflow"


def branch_labels(problem: ProblemSetup, n0: int = 0) -> npt.NDArray[np.int8]:
    """
    Branch of every (time, age) node from time index n0 on.

    0 marks a <= t - T_tilde, where the adjoint state is the propagated terminal datum
    alone. Elsewhere the upper limit min{abar, A - a + t - T_tilde} selects 1 when it
    equals abar and 2 otherwise.
    """
    lattice = problem.lattice
    t = np.asarray(lattice.t[n0:])[:, None]
    a = np.asarray(lattice.a)[None, :]
    t_tilde = problem.T_tilde
    limit = np.minimum(problem.abar, problem.A - a + t - t_tilde)
    labels = np.where(np.isclose(limit, problem.abar, atol=NODE_TOL), 1, 2).astype(np.int8)
    labels[a <= t - t_tilde + NODE_TOL] = 0
    return labels


def characteristics_adjoint(
    problem: ProblemSetup,
    v_T: npt.ArrayLike,
    *,
    t_start: float = 0.0,
    propagator: Propagator | None = None,
) -> Trajectory:
    """
    Adjoint state computed along the characteristics t - a = const.

    Each cell is v(n, m) = K_n(v(n+1, m+1) + dt/2 beta_{m+1} tau^{n+1}) + dt/2 beta_m tau^n,
    where tau is the age-0 trace. The trace starts as the propagated terminal datum and is
    iterated until its sup-change is at most FIXED_POINT_TOL.

    Raises:
        DatumError: If v_T does not vanish at a = A.
        FixedPointError: If the trace does not converge within FIXED_POINT_MAX_ITER sweeps.
    """
    prop = Propagator(problem) if propagator is None else propagator
    lattice = problem.lattice
    n0, n1 = _window(lattice, t_start, None)
    datum = check_terminal_datum(problem, v_T)
    half = lattice.dt / 2
    beta = prop.beta
    labels = branch_labels(problem, n0)

    def sweep(trace: FloatArray | None) -> tuple[FloatArray, int]:
        values = np.zeros((n1 - n0 + 1, *lattice.slice_shape))
        values[-1] = datum
        flagged = 0
        for n in range(n1 - 1, n0 - 1, -1):
            incoming = np.zeros(lattice.slice_shape)
            incoming[:-1] = values[n + 1 - n0, 1:]
            if trace is None:
                values[n - n0] = prop.diffuse(incoming, n)
                values[n - n0, -1] = 0.0
                continue
            later = np.zeros(lattice.slice_shape)
            # the trace at t_{n+1} is final in this sweep, only the current level is lagged
            later[:-1] = half * beta[1:] * values[n + 1 - n0, 0][None, :]
            current = half * beta * trace[n - n0][None, :]
            values[n - n0] = prop.diffuse(incoming + later, n) + current
            values[n - n0, -1] = 0.0
            touched = np.max(np.abs(later) + np.abs(current), axis=-1) > 0
            flagged += int(np.count_nonzero(touched & (labels[n - n0] == 0)))
        return values, flagged

    values, flagged = sweep(None)
    iterations, change = 1, 0.0
    if np.any(beta):
        trace = values[:, 0].copy()
        for iterations in range(1, global_settings.FIXED_POINT_MAX_ITER + 1):  # noqa: B007
            values, flagged = sweep(trace)
            change = float(np.max(np.abs(values[:, 0] - trace)))
            logger.debug(f"Characteristics sweep {iterations}: trace change {change:.3e}")
            trace = values[:, 0].copy()
            if change <= global_settings.FIXED_POINT_TOL:
                break
        else:
            raise FixedPointError(iterations, change)
    if flagged:
        logger.warning(f"{flagged} terminal-branch cells received a fertility source")

    counts = {str(b): int(np.count_nonzero(labels == i)) for i, b in enumerate(Branch)}
    return Trajectory(
        lattice=lattice,
        kind=TrajectoryKind.ADJOINT_CHARACTERISTICS,
        n_start=n0,
        values=values,
        metadata={
            "iterations": iterations,
            "trace_change": change,
            "flagged_cells": flagged,
            "branch_counts": counts,
            "scheme": str(prop.scheme),
        },
    )


# %% === Diagnostics === #
def energy_profile(trajectory: Trajectory, problem: ProblemSetup) -> FloatArray:
    """Squared weighted norm of every slice of a trajectory."""
    return np.array([state_norm(y, problem) ** 2 for y in trajectory.values])


def max_energy_increment(trajectory: Trajectory, problem: ProblemSetup) -> float:
    """Largest positive relative increment of the slice energy, 0 when it never grows."""
    energy = energy_profile(trajectory, problem)
    if energy.size < 2 or energy[0] == 0:
        return 0.0
    return max(float(np.max(np.diff(energy))) / float(energy[0]), 0.0)
