"""
Problem data of the degenerate age-structured population model.

The state y(t, a, x) lives on [0, T] x [0, A] x [0, 1] and solves

    y_t + y_a - k(x) y_xx + mu(t, a, x) y = f chi_omega,
    y(t, a, 0) = y(t, a, 1) = 0,
    y(t, 0, x) = int_0^A beta(a, x) y(t, a, x) da,

with a diffusion coefficient k that may vanish at a boundary point or at an interior
point x0. This module holds the coefficient families, the rates, the control region, the
aligned lattice, the weighted norms of L^2_{1/k} and the numerical probes of the
structural hypotheses on k and on the rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import StrEnum
from fractions import Fraction
from functools import cached_property
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger
from scipy import integrate

from degenpop.config import global_settings

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing as npt

type FloatArray = npt.NDArray[np.float64]
type BoolArray = npt.NDArray[np.bool_]
type CoefficientFunction = Callable[[FloatArray], FloatArray]
type DeathRate = Callable[[Any, Any, Any], Any]
type Fertility = Callable[[Any, Any], Any]

NODE_TOL = 1e-9


# %% === Exceptions === #
class DomainError(ValueError):
    """Base class for evaluations requested outside of their domain."""


class DataError(ValueError):
    """Base class for invalid grid data."""


class HypothesisError(ValueError):
    """Base class for violated structural hypotheses."""


class ConfigurationError(ValueError):
    """Base class for inconsistent problem, lattice or parameter combinations."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures of the solvers."""


class OutOfUnitIntervalError(DomainError):
    """Raised when a space coordinate falls outside of [0, 1]."""

    def __init__(self, x: float) -> None:
        self.x = x
        super().__init__(f"Space coordinate {x} is outside of [0, 1].")


class NonFiniteDataError(DataError):
    """Raised when a grid function contains NaN or infinite values."""

    def __init__(self, name: str, count: int) -> None:
        self.name = name
        self.count = count
        super().__init__(f"Grid function '{name}' has {count} non-finite values.")


class GridShapeError(DataError):
    """Raised when a grid function does not match the lattice."""

    def __init__(self, name: str, shape: tuple[int, ...], expected: tuple[int, ...]) -> None:
        self.name = name
        self.shape = shape
        self.expected = expected
        super().__init__(f"Grid function '{name}' has shape {shape}, expected {expected}.")


class CoefficientError(ConfigurationError):
    """Raised when a diffusion coefficient is built with inconsistent data."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Invalid diffusion coefficient: {reason}.")


class LatticeAlignmentError(ConfigurationError):
    """Raised when a point or step that must sit on the lattice does not."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Lattice alignment failed: {reason}.")


class ProblemSetupError(ConfigurationError):
    """Raised when the problem data violate a cross-field constraint."""

    def __init__(self, constraint: str) -> None:
        self.constraint = constraint
        super().__init__(f"Invalid problem setup: {constraint}.")


class ControlRegionError(ConfigurationError):
    """Raised when the control region has an invalid shape."""

    def __init__(self, intervals: Sequence[tuple[float, float]], reason: str) -> None:
        self.intervals = tuple(intervals)
        super().__init__(f"Invalid control region {self.intervals}: {reason}.")


class HypothesisViolationError(HypothesisError):
    """Raised in strict mode when a structural hypothesis fails."""

    def __init__(self, failures: Sequence[HypothesisCheck]) -> None:
        self.failures = tuple(failures)
        details = "; ".join(f"{check.name}: {check.detail}" for check in self.failures)
        super().__init__(f"{len(self.failures)} hypothesis check(s) failed: {details}")


# %% === Enums === #
class Regime(StrEnum):
    """Degeneracy regime of the diffusion coefficient."""

    BOUNDARY_0 = "boundary0"
    BOUNDARY_1 = "boundary1"
    INTERIOR_WEAK = "interior_weak"
    INTERIOR_STRONG = "interior_strong"
    NONDEGENERATE = "nondegenerate"

    @property
    def is_interior(self) -> bool:
        """Whether k vanishes at an interior point."""
        return self in {Regime.INTERIOR_WEAK, Regime.INTERIOR_STRONG}

    @property
    def is_boundary(self) -> bool:
        """Whether k vanishes at an endpoint."""
        return self in {Regime.BOUNDARY_0, Regime.BOUNDARY_1}


class Scheme(StrEnum):
    """Time discretization of the diffusion step."""

    IMPLICIT_EULER = "implicit_euler"
    CRANK_NICOLSON = "crank_nicolson"

    @property
    def theta(self) -> float:
        """Implicitness parameter of the theta-scheme."""
        return 1.0 if self is Scheme.IMPLICIT_EULER else 0.5


# %% === Diffusion coefficient === #
def _inverse_power_integral(d_near: FloatArray, d_far: FloatArray, alpha: float) -> FloatArray:
    """Integral of d^(-alpha) from d_near to d_far, both nonnegative."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if math.isclose(alpha, 1.0):
            return np.log(d_far) - np.log(d_near)
        return (d_far ** (1 - alpha) - d_near ** (1 - alpha)) / (1 - alpha)


@dataclass(frozen=True, kw_only=True)
class DispersionCoefficient:
    """
    Diffusion coefficient k on [0, 1] with its degeneracy regime.

    Built-in families are the power laws x^alpha, (1 - x)^alpha and |x - x0|^alpha, and
    the affine nondegenerate coefficient c0 + c1 x. Any other coefficient is given as a
    pair of vectorized callables (k, k').

    Attributes:
        regime: Degeneracy regime.
        alpha: Exponent of the built-in power laws.
        x0: Interior degeneracy point, interior regimes only.
        M: Degeneracy constant; defaults to alpha for power laws.
        custom: Pair of callables (k, k') for user coefficients.
        affine: Coefficients (c0, c1) of a nondegenerate affine k.
    """

    regime: Regime
    alpha: float = 1.0
    x0: float | None = None
    M: float | None = None
    custom: tuple[CoefficientFunction, CoefficientFunction] | None = None
    affine: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.custom is not None and self.affine is not None:
            raise CoefficientError("custom and affine coefficients are exclusive")
        if self.regime is Regime.NONDEGENERATE:
            if self.custom is None and self.affine is None:
                raise CoefficientError("a nondegenerate coefficient needs affine or custom data")
            if self.affine is not None:
                c0, c1 = self.affine
                if c0 <= 0 or c0 + c1 <= 0:
                    raise CoefficientError(f"affine k = {c0} + {c1} x must be positive on [0, 1]")
        elif self.affine is not None:
            raise CoefficientError("affine coefficients are nondegenerate")
        if self.regime.is_interior:
            if self.x0 is None or not 0 < self.x0 < 1:
                raise CoefficientError(f"interior regimes need x0 in (0, 1), got {self.x0}")
        elif self.x0 is not None:
            raise CoefficientError(f"x0 is only meaningful for interior regimes, got {self.x0}")
        if self.is_power_law:
            if self.alpha <= 0:
                raise CoefficientError(f"power-law exponent must be positive, got {self.alpha}")
            if self.regime is Regime.INTERIOR_WEAK and not self.alpha < 1:
                raise CoefficientError(f"interior_weak needs alpha in (0, 1), got {self.alpha}")
            if self.regime is Regime.INTERIOR_STRONG and not 1 <= self.alpha < 2:
                raise CoefficientError(f"interior_strong needs alpha in [1, 2), got {self.alpha}")
        elif self.custom is not None and self.regime is not Regime.NONDEGENERATE and self.M is None:
            raise CoefficientError("custom degenerate coefficients need an explicit M")

    # === Constructors === #
    @classmethod
    def power_law(
        cls, regime: Regime, alpha: float, x0: float | None = None
    ) -> DispersionCoefficient:
        """Build x^alpha, (1 - x)^alpha or |x - x0|^alpha according to the regime."""
        return cls(regime=regime, alpha=alpha, x0=x0)

    @classmethod
    def from_affine(cls, c0: float, c1: float) -> DispersionCoefficient:
        """Build the nondegenerate coefficient k(x) = c0 + c1 x."""
        return cls(regime=Regime.NONDEGENERATE, affine=(c0, c1))

    @classmethod
    def from_callables(
        cls,
        regime: Regime,
        k: CoefficientFunction,
        dk: CoefficientFunction,
        *,
        M: float | None = None,
        x0: float | None = None,
    ) -> DispersionCoefficient:
        """Build a user coefficient from vectorized callables for k and k'."""
        return cls(regime=regime, custom=(k, dk), M=M, x0=x0)

    # === Properties === #
    @property
    def is_power_law(self) -> bool:
        """Whether k is one of the built-in power laws."""
        return self.custom is None and self.affine is None

    @property
    def degeneracy_point(self) -> float | None:
        """Point where k vanishes, or None for nondegenerate coefficients."""
        match self.regime:
            case Regime.BOUNDARY_0:
                return 0.0
            case Regime.BOUNDARY_1:
                return 1.0
            case Regime.INTERIOR_WEAK | Regime.INTERIOR_STRONG:
                return self.x0
            case Regime.NONDEGENERATE:
                return None

    @property
    def m_const(self) -> float:
        """Degeneracy constant M (alpha for power laws unless overridden)."""
        if self.M is not None:
            return self.M
        return self.alpha if self.is_power_law else 0.0

    @property
    def excludes_degenerate_node(self) -> bool:
        """Whether the degenerate interior node is removed from the state space."""
        return self.regime is Regime.INTERIOR_STRONG

    @cached_property
    def d_frak(self) -> float:
        """Sup norm of k' on [0, 1]."""
        if self.affine is not None:
            return abs(self.affine[1])
        if self.is_power_law:
            if self.alpha < 1:
                return math.inf
            # |k'| = alpha d^(alpha - 1) is maximal at the largest distance to the zero
            z = self.degeneracy_point
            assert z is not None
            return self.alpha * max(z, 1 - z) ** (self.alpha - 1)
        xs = np.linspace(0.0, 1.0, global_settings.HYPOTHESIS_SAMPLES)
        return float(np.max(np.abs(self.derivative(xs))))

    # === Evaluation === #
    def __call__(self, x: npt.ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=np.float64)
        if self.custom is not None:
            return np.asarray(self.custom[0](xs), dtype=np.float64)
        if self.affine is not None:
            c0, c1 = self.affine
            return c0 + c1 * xs
        z = self.degeneracy_point
        assert z is not None
        return np.abs(xs - z) ** self.alpha

    def derivative(self, x: npt.ArrayLike) -> FloatArray:
        """Evaluate k' (one-sided limits are not taken at the degeneracy point)."""
        xs = np.asarray(x, dtype=np.float64)
        if self.custom is not None:
            return np.asarray(self.custom[1](xs), dtype=np.float64)
        if self.affine is not None:
            return np.full_like(xs, self.affine[1])
        z = self.degeneracy_point
        assert z is not None
        d = xs - z
        with np.errstate(divide="ignore", invalid="ignore"):
            dk = self.alpha * np.sign(d) * np.abs(d) ** (self.alpha - 1)
        return np.where(d == 0, 0.0, dk)

    def inverse_integral(self, lo: npt.ArrayLike, hi: npt.ArrayLike) -> FloatArray:
        """
        Integral of 1/k over [lo, hi], elementwise.

        Closed forms are used for the built-in families and adaptive quadrature for custom
        coefficients. Divergent integrals are returned as inf.
        """
        lo_arr, hi_arr = np.broadcast_arrays(
            np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        )
        if self.affine is not None:
            c0, c1 = self.affine
            if c1 == 0:
                return (hi_arr - lo_arr) / c0
            return np.log((c0 + c1 * hi_arr) / (c0 + c1 * lo_arr)) / c1
        if self.is_power_law:
            z = self.degeneracy_point
            assert z is not None
            total = np.zeros(lo_arr.shape)
            left = lo_arr < z
            if np.any(left):
                total[left] += _inverse_power_integral(
                    z - np.minimum(hi_arr[left], z), z - lo_arr[left], self.alpha
                )
            right = hi_arr > z
            if np.any(right):
                total[right] += _inverse_power_integral(
                    np.maximum(lo_arr[right], z) - z, hi_arr[right] - z, self.alpha
                )
            return total
        return np.vectorize(self._quad_inverse_integral, otypes=[np.float64])(lo_arr, hi_arr)

    def _quad_inverse_integral(self, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        z = self.degeneracy_point
        pieces = [(lo, z), (z, hi)] if z is not None and lo < z < hi else [(lo, hi)]
        total = 0.0
        for a, b in pieces:
            value, _ = integrate.quad(
                lambda y: 1.0 / float(self(y)),
                a,
                b,
                epsrel=global_settings.QUAD_EPSREL,
                limit=200,
            )
            total += value
        return total if math.isfinite(total) else math.inf


def eval_k(k: DispersionCoefficient, x: float) -> float:
    """
    Evaluate the diffusion coefficient at a point of [0, 1].

    Raises:
        OutOfUnitIntervalError: If x is outside of [0, 1].
    """
    if not 0.0 <= x <= 1.0:
        raise OutOfUnitIntervalError(x)
    return float(k(x))


# %% === Lattice === #
def _exact(value: float) -> Fraction:
    return Fraction(str(value))


@dataclass(frozen=True, kw_only=True)
class Lattice:
    """
    Uniform space-age-time lattice with equal age and time steps.

    Attributes:
        T: Final time.
        A: Maximal age.
        nx: Number of space nodes, h = 1 / (nx - 1).
        nt: Number of time steps, dt = T / nt.
        na: Number of age steps, da = A / na = dt.
    """

    T: float
    A: float
    nx: int
    nt: int
    na: int
    x: FloatArray = field(repr=False, compare=False)
    t: FloatArray = field(repr=False, compare=False)
    a: FloatArray = field(repr=False, compare=False)

    @classmethod
    def build(cls, *, T: float, A: float, nx: int, nt: int, na: int | None = None) -> Lattice:
        """
        Build the lattice, deriving the number of age steps from da = dt.

        Raises:
            LatticeAlignmentError: If A / dt is not an integer or a declared `na`
                disagrees with it.
        """
        if nx < 3 or nt < 1:
            raise LatticeAlignmentError(f"need nx >= 3 and nt >= 1, got nx={nx}, nt={nt}")
        if T <= 0 or A <= 0:
            raise LatticeAlignmentError(f"horizons must be positive, got T={T}, A={A}")
        dt = _exact(T) / nt
        steps = _exact(A) / dt
        if steps.denominator != 1:
            raise LatticeAlignmentError(f"A / dt = {steps} is not an integer (A={A}, dt={dt})")
        if na is not None and na != steps.numerator:
            raise LatticeAlignmentError(f"declared na={na} but da = dt forces na={steps}")
        n_age = steps.numerator
        return cls(
            T=T,
            A=A,
            nx=nx,
            nt=nt,
            na=n_age,
            x=_frozen(np.linspace(0.0, 1.0, nx)),
            t=_frozen(np.linspace(0.0, T, nt + 1)),
            a=_frozen(np.linspace(0.0, A, n_age + 1)),
        )

    @property
    def h(self) -> float:
        """Space step."""
        return 1.0 / (self.nx - 1)

    @property
    def dt(self) -> float:
        """Time step."""
        return self.T / self.nt

    @property
    def da(self) -> float:
        """Age step, equal to the time step."""
        return self.A / self.na

    @property
    def slice_shape(self) -> tuple[int, int]:
        """Shape of an (age x space) grid function."""
        return (self.na + 1, self.nx)

    @property
    def tag(self) -> str:
        """Short identifier of the lattice, used in report names."""
        return f"{self.nx}x{self.na}x{self.nt}"

    def node_index(self, coordinate: float, step: float, name: str) -> int:
        """
        Index of the node holding `coordinate` on an axis of step `step`.

        Raises:
            LatticeAlignmentError: If the coordinate is not a node.
        """
        ratio = coordinate / step
        index = round(ratio)
        if abs(ratio - index) > NODE_TOL:
            raise LatticeAlignmentError(f"{name}={coordinate} is not on a node (step {step})")
        return index

    def space_index(self, x: float) -> int:
        """Index of a space node."""
        return self.node_index(x, self.h, "x")

    def time_index(self, t: float) -> int:
        """Index of a time node."""
        return self.node_index(t, self.dt, "t")

    def age_index(self, a: float) -> int:
        """Index of an age node."""
        return self.node_index(a, self.da, "a")

    def age_floor_index(self, a: float) -> int:
        """Index of the last age node not above `a`."""
        return math.floor(a / self.da + NODE_TOL)


def _frozen(array: npt.ArrayLike) -> FloatArray:
    out = np.array(array, dtype=np.float64)
    out.flags.writeable = False
    return out


# %% === Rates and control region === #
@dataclass(frozen=True, kw_only=True)
class Rates:
    """
    Death and fertility rates.

    Both callables are vectorized and broadcast their arguments.

    Attributes:
        mu: Death rate mu(t, a, x) >= 0.
        beta: Fertility beta(a, x) >= 0, vanishing for a <= abar.
        abar: Fertility onset.
        label: Human readable description used in reports.
    """

    mu: DeathRate
    beta: Fertility
    abar: float
    label: str = ""

    def mu_slice(self, t: float, lattice: Lattice) -> FloatArray:
        """Death rate sampled on the (age x space) nodes at time t."""
        values = self.mu(t, lattice.a[:, None], lattice.x[None, :])
        return np.broadcast_to(np.asarray(values, dtype=np.float64), lattice.slice_shape).copy()

    def beta_grid(self, lattice: Lattice) -> FloatArray:
        """Fertility sampled on the (age x space) nodes."""
        values = self.beta(lattice.a[:, None], lattice.x[None, :])
        return np.broadcast_to(np.asarray(values, dtype=np.float64), lattice.slice_shape).copy()


@dataclass(frozen=True)
class ControlRegion:
    """
    Control region omega made of one or two open intervals compactly inside (0, 1).

    Attributes:
        intervals: Sorted disjoint intervals (lo, hi).
    """

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.intervals) not in {1, 2}:
            raise ControlRegionError(self.intervals, "expected one or two intervals")
        for lo, hi in self.intervals:
            if not 0 < lo < hi < 1:
                raise ControlRegionError(self.intervals, "closure must lie inside (0, 1)")
        if len(self.intervals) == 2 and not self.intervals[0][1] < self.intervals[1][0]:
            raise ControlRegionError(self.intervals, "intervals must be sorted and disjoint")

    @classmethod
    def of(cls, *intervals: tuple[float, float]) -> ControlRegion:
        """Build a region from intervals given as positional arguments."""
        return cls(tuple((float(lo), float(hi)) for lo, hi in intervals))

    def mask(self, x: npt.ArrayLike) -> BoolArray:
        """Indicator of omega at the given points."""
        xs = np.asarray(x, dtype=np.float64)
        inside = np.zeros(xs.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (xs > lo) & (xs < hi)
        return inside

    def contains(self, point: float) -> bool:
        """Whether the point lies in omega."""
        return bool(self.mask(point))

    def closure_contains(self, point: float) -> bool:
        """Whether the point lies in the closure of omega."""
        return any(lo <= point <= hi for lo, hi in self.intervals)

    def is_compactly_inside(self, other: ControlRegion) -> bool:
        """Whether the closure of this region lies inside `other`."""
        return all(
            any(olo < lo and hi < ohi for olo, ohi in other.intervals) for lo, hi in self.intervals
        )

    def straddles(self, point: float) -> bool:
        """Whether the region is the two-interval form with rho1 < point < lambda2."""
        return len(self.intervals) == 2 and self.intervals[0][1] < point < self.intervals[1][0]


# %% === Hypothesis validation === #
@dataclass(frozen=True, kw_only=True, slots=True)
class HypothesisCheck:
    """
    Outcome of one hypothesis check.

    Attributes:
        name: Identifier of the hypothesis.
        passed: True or False, or None when the hypothesis is not validated.
        detail: Human readable explanation.
    """

    name: str
    passed: bool | None
    detail: str


@dataclass(frozen=True, kw_only=True, slots=True)
class ValidationReport:
    """Pass/fail outcome per structural hypothesis."""

    checks: tuple[HypothesisCheck, ...]

    @property
    def passed(self) -> bool:
        """Whether no check failed."""
        return all(check.passed is not False for check in self.checks)

    @property
    def failures(self) -> tuple[HypothesisCheck, ...]:
        """Checks that failed."""
        return tuple(check for check in self.checks if check.passed is False)

    def __getitem__(self, name: str) -> HypothesisCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> dict[str, dict[str, object]]:
        """Serializable form of the report."""
        return {c.name: {"passed": c.passed, "detail": c.detail} for c in self.checks}


def _m_range_ok(regime: Regime, m: float) -> tuple[bool, str]:
    match regime:
        case Regime.BOUNDARY_0 | Regime.BOUNDARY_1:
            return 0 < m < 2, "0 < M < 2"
        case Regime.INTERIOR_WEAK:
            return 0 < m < 1, "M in (0, 1)"
        case Regime.INTERIOR_STRONG:
            return 1 <= m < 2, "M in [1, 2)"
        case Regime.NONDEGENERATE:
            return True, "no constraint"


def validate_hypotheses(k: DispersionCoefficient, lattice: Lattice) -> ValidationReport:
    """
    Check the structural hypotheses on k at the lattice nodes.

    Failures are reported, never raised.

    Args:
        k: Diffusion coefficient.
        lattice: Lattice whose space nodes are probed.

    Returns:
        One check per hypothesis relevant to the regime of k.
    """
    x = np.asarray(lattice.x)
    kx = k(x)
    z = k.degeneracy_point
    checks: list[HypothesisCheck] = []

    # === Degeneracy set === #
    if z is None:
        positive = bool(np.all(kx > 0))
        checks.append(
            HypothesisCheck(
                name="degeneracy",
                passed=positive,
                detail="k > 0 at every node" if positive else "k vanishes at some node",
            )
        )
        checks.append(
            HypothesisCheck(name="structural_bound", passed=True, detail="vacuous (nondegenerate)")
        )
        return ValidationReport(checks=tuple(checks))

    off = np.abs(x - z) > NODE_TOL
    zero_at_z = float(k(z)) == 0.0
    positive_off = bool(np.all(kx[off] > 0))
    checks.append(
        HypothesisCheck(
            name="degeneracy",
            passed=zero_at_z and positive_off,
            detail=f"k({z}) = {float(k(z))}, min off-degeneracy value {np.min(kx[off]):.3e}",
        )
    )

    # === Pointwise bound (x - z) k' <= M k === #
    m = k.m_const
    in_range, range_text = _m_range_ok(k.regime, m)
    ratio = (x[off] - z) * k.derivative(x[off]) / kx[off]
    worst = float(np.max(ratio))
    pointwise = worst <= m * (1 + 1e-12) + 1e-12
    checks.append(
        HypothesisCheck(
            name="structural_bound",
            passed=in_range and pointwise,
            detail=f"max (x - z) k'/k = {worst:.6g} vs M = {m} ({range_text})",
        )
    )

    if k.is_power_law:
        consistent = k.M is None or math.isclose(k.M, k.alpha)
        checks.append(
            HypothesisCheck(
                name="power_law_consistency",
                passed=consistent,
                detail=f"M = {m}, alpha = {k.alpha}",
            )
        )

    # === Interior-only probes === #
    if k.regime.is_interior:
        left = x < z - NODE_TOL
        right = x > z + NODE_TOL
        slopes = [
            np.abs(np.diff((x[side] - z) * k.derivative(x[side]) / kx[side])) / lattice.h
            for side in (left, right)
            if np.count_nonzero(side) > 1
        ]
        max_slope = max((float(np.max(s)) for s in slopes), default=0.0)
        checks.append(
            HypothesisCheck(
                name="bounded_log_derivative",
                passed=math.isfinite(max_slope),
                detail=f"max finite-difference slope of (x - x0) k'/k = {max_slope:.3e}",
            )
        )

    if k.regime is Regime.INTERIOR_STRONG:
        assert z is not None
        found = _scan_monotone_exponent(k, x, z, m)
        checks.append(
            HypothesisCheck(
                name="monotone_ratio",
                passed=found is not None,
                detail=(
                    f"k/|x - x0|^theta monotone for theta = {found:.4g}"
                    if found is not None
                    else "no theta in (0, M] makes k/|x - x0|^theta monotone"
                ),
            )
        )

    if k.regime is Regime.INTERIOR_WEAK:
        sqrt_k = np.sqrt(kx[off])
        finite = bool(np.all(np.isfinite(k.derivative(x[off]) / sqrt_k)))
        checks.append(
            HypothesisCheck(
                name="reflected_identity",
                passed=finite if k.is_power_law else None,
                detail=(
                    "k'/sqrt(k) bounded away from x0 (constant g default)"
                    if k.is_power_law
                    else "not validated for user coefficients"
                ),
            )
        )

    return ValidationReport(checks=tuple(checks))


def _scan_monotone_exponent(
    k: DispersionCoefficient, x: FloatArray, z: float, m: float, n_scan: int = 20
) -> float | None:
    left = x < z - NODE_TOL
    right = x > z + NODE_TOL
    for theta in np.linspace(m / n_scan, m, n_scan)[::-1]:
        left_ratio = k(x[left]) / np.abs(x[left] - z) ** theta
        right_ratio = k(x[right]) / np.abs(x[right] - z) ** theta
        left_ok = np.all(np.diff(left_ratio) <= 1e-12 * np.abs(left_ratio[1:]) + 1e-15)
        right_ok = np.all(np.diff(right_ratio) >= -1e-12 * np.abs(right_ratio[1:]) - 1e-15)
        if left_ok and right_ok:
            return float(theta)
    return None


def validate_rates(rates: Rates, lattice: Lattice) -> tuple[HypothesisCheck, ...]:
    """Check the sign and onset hypotheses of the rates on the lattice."""
    mu_min = min(float(np.min(rates.mu_slice(t, lattice))) for t in lattice.t)
    beta = rates.beta_grid(lattice)
    young = lattice.a <= rates.abar + NODE_TOL
    onset_max = float(np.max(np.abs(beta[young]))) if np.any(young) else 0.0
    return (
        HypothesisCheck(
            name="death_rate_sign", passed=mu_min >= 0, detail=f"min mu = {mu_min:.3e}"
        ),
        HypothesisCheck(
            name="fertility_sign",
            passed=bool(np.min(beta) >= 0),
            detail=f"min beta = {np.min(beta):.3e}",
        ),
        HypothesisCheck(
            name="fertility_onset",
            passed=onset_max == 0.0,
            detail=f"max |beta| for a <= abar = {onset_max:.3e}",
        ),
    )


# %% === Weighted norms === #
def active_mask(k: DispersionCoefficient, lattice: Lattice) -> BoolArray:
    """Space nodes carrying unknowns: interior nodes minus an excluded degenerate node."""
    active = np.ones(lattice.nx, dtype=bool)
    active[[0, -1]] = False
    z = k.degeneracy_point
    if k.excludes_degenerate_node and z is not None:
        active[lattice.space_index(z)] = False
    return active


def cell_weights(k: DispersionCoefficient, lattice: Lattice) -> FloatArray:
    """
    Weights w_i = integral of 1/k over the cell of node i.

    Cells are [x_i - h/2, x_i + h/2]. Dirichlet nodes and the degenerate node of the strong
    interior regime get weight 0.

    Raises:
        ConfigurationError: If an active cell has a divergent weight.
    """
    x = np.asarray(lattice.x)
    half = lattice.h / 2
    active = active_mask(k, lattice)
    weights = np.zeros(lattice.nx)
    weights[active] = k.inverse_integral(x[active] - half, x[active] + half)
    if not np.all(np.isfinite(weights)):
        raise CoefficientError("1/k is not integrable on an active cell")
    return _frozen(weights)


def _check_finite(u: FloatArray, name: str) -> None:
    bad = int(np.count_nonzero(~np.isfinite(u)))
    if bad:
        raise NonFiniteDataError(name, bad)


def weighted_norm(u: npt.ArrayLike, k: DispersionCoefficient, lattice: Lattice) -> float:
    """
    Discrete norm of L^2_{1/k}(0, 1): sqrt(sum_i u_i^2 w_i).

    Raises:
        NonFiniteDataError: If u has non-finite values.
    """
    values = np.asarray(u, dtype=np.float64)
    _check_finite(values, "u")
    return math.sqrt(float(np.sum(values**2 * cell_weights(k, lattice))))


def weighted_norm_aq(u: npt.ArrayLike, k: DispersionCoefficient, lattice: Lattice) -> float:
    """
    Discrete norm of L^2(0, A; L^2_{1/k}(0, 1)) with the trapezoid rule in age.

    Raises:
        NonFiniteDataError: If u has non-finite values.
    """
    values = np.asarray(u, dtype=np.float64)
    _check_finite(values, "u")
    per_age = np.sum(values**2 * cell_weights(k, lattice)[None, :], axis=-1)
    return math.sqrt(float(integrate.trapezoid(per_age, dx=lattice.da)))


# %% === Problem setup === #
@dataclass(frozen=True, kw_only=True, eq=False)
class ProblemSetup:
    """
    Complete data of a simulation or control problem.

    Attributes:
        T: Final time.
        A: Maximal age.
        rates: Death and fertility rates.
        k: Diffusion coefficient.
        delta: Target age margin in (T, A).
        omega: Control region.
        lattice: Aligned lattice.
        y0: Initial datum on (age x space) nodes, or None for zero.
        scheme: Time discretization of the diffusion step.
        strict: Whether failed hypotheses raise instead of warning.
    """

    T: float
    A: float
    rates: Rates
    k: DispersionCoefficient
    delta: float
    omega: ControlRegion
    lattice: Lattice
    y0: FloatArray | None = field(default=None, repr=False)
    scheme: Scheme = Scheme.IMPLICIT_EULER
    strict: bool = False

    def __post_init__(self) -> None:
        lattice = self.lattice
        if not (math.isclose(lattice.T, self.T) and math.isclose(lattice.A, self.A)):
            raise ProblemSetupError("lattice horizons differ from T and A")
        if not self.T < self.A:
            raise ProblemSetupError(f"T must be smaller than A (T={self.T}, A={self.A})")
        if not 0 < self.rates.abar <= self.T:
            raise ProblemSetupError(
                f"fertility onset needs 0 < abar <= T (abar={self.rates.abar}, T={self.T})"
            )
        if not self.T < self.delta < self.A:
            raise ProblemSetupError(f"delta must lie in (T, A), got {self.delta}")
        lattice.age_index(self.rates.abar)
        z = self.k.degeneracy_point
        if z is not None:
            lattice.space_index(z)
        if self.k.regime.is_interior:
            assert z is not None
            if not (self.omega.contains(z) or self.omega.straddles(z)):
                raise ProblemSetupError(
                    f"interior regimes need x0 in omega or two intervals around x0 (x0={z})"
                )
        if self.y0 is not None:
            y0 = np.asarray(self.y0, dtype=np.float64)
            if y0.shape != lattice.slice_shape:
                raise GridShapeError("y0", y0.shape, lattice.slice_shape)
            _check_finite(y0, "y0")
            object.__setattr__(self, "y0", _frozen(y0 * self.active[None, :]))

        failures = self.hypotheses.failures
        if failures:
            if self.strict:
                raise HypothesisViolationError(failures)
            for check in failures:
                logger.warning(f"Hypothesis '{check.name}' failed: {check.detail}")

    @cached_property
    def hypotheses(self) -> ValidationReport:
        """Structural checks on k and on the rates."""
        report = validate_hypotheses(self.k, self.lattice)
        return ValidationReport(checks=report.checks + validate_rates(self.rates, self.lattice))

    @cached_property
    def weights(self) -> FloatArray:
        """Cell weights of L^2_{1/k}."""
        return cell_weights(self.k, self.lattice)

    @cached_property
    def active(self) -> BoolArray:
        """Space nodes carrying unknowns."""
        return active_mask(self.k, self.lattice)

    @cached_property
    def omega_mask(self) -> BoolArray:
        """Active space nodes inside the control region."""
        return self.omega.mask(self.lattice.x) & self.active

    @property
    def abar(self) -> float:
        """Fertility onset."""
        return self.rates.abar

    @property
    def T_tilde(self) -> float:
        """Start of the control window, T - abar."""
        return self.lattice.t[self.lattice.nt - self.lattice.age_index(self.abar)]

    @cached_property
    def delta_index(self) -> int:
        """Age index of the downward-snapped margin."""
        return self.lattice.age_floor_index(self.delta)

    @property
    def delta_snapped(self) -> float:
        """Margin snapped down to the age lattice."""
        return float(self.lattice.a[self.delta_index])

    @cached_property
    def target_ages(self) -> BoolArray:
        """Age nodes of the target set delta < a < A."""
        j = np.arange(self.lattice.na + 1)
        return _frozen_bool((j > self.delta_index) & (j < self.lattice.na))

    @property
    def initial_state(self) -> FloatArray:
        """Initial datum, zero when none is given."""
        return np.zeros(self.lattice.slice_shape) if self.y0 is None else np.array(self.y0)


def _frozen_bool(array: BoolArray) -> BoolArray:
    out = np.array(array, dtype=bool)
    out.flags.writeable = False
    return out


# %% === State inner products === #
def state_inner(u: npt.ArrayLike, v: npt.ArrayLike, problem: ProblemSetup) -> float:
    """
    Weighted inner product da * sum_j sum_i w_i u_ji v_ji of two (age x space) fields.

    Every adjoint and control computation pairs states with this product.
    """
    product = np.asarray(u, dtype=np.float64) * np.asarray(v, dtype=np.float64)
    return problem.lattice.da * float(np.sum(product * problem.weights))


def state_norm(u: npt.ArrayLike, problem: ProblemSetup) -> float:
    """Norm induced by `state_inner`."""
    return math.sqrt(max(state_inner(u, u, problem), 0.0))
