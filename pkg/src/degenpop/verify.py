"""
Numerical harness for the weighted inequalities of the adjoint system.

Every check evaluates both sides of an inequality on discrete solutions and reports the
effective constant max(lhs / rhs). The existential constants of the estimates are never
claimed: a check passes when its ratios stay finite (and, across grids, stable) or when
it meets an explicit numeric criterion.

All space-time integrals carrying the Carleman exponential go through
`degenpop.weights.log_weighted_product`. Time-age sums skip the first and last time slice
and the a = 0 slice, where Theta is singular.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
from loguru import logger
from rich import box
from rich.console import Console
from rich.table import Table
from scipy import integrate
from tqdm import tqdm

from degenpop.config import global_settings
from degenpop.model import (
    ConfigurationError,
    ControlRegion,
    NumericalError,
    Regime,
    Scheme,
    state_inner,
)
from degenpop.pde import (
    Propagator,
    Renewal,
    assemble_diffusion,
    characteristics_adjoint,
    energy_profile,
    max_energy_increment,
    solve_adjoint_transpose,
    solve_forward,
)
from degenpop.presets import (
    BetaKind,
    BetaPreset,
    Scenario,
    random_smooth_field,
    reference_problem,
    sin2_bump,
)
from degenpop.weights import CarlemanParams, WeightField, WeightKind, log_weighted_product, theta

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy.typing as npt

    from degenpop.model import DispersionCoefficient, FloatArray, Lattice, ProblemSetup

DEFAULT_S_HAT = (1.0, 2.0, 4.0, 8.0, 16.0)
CACCIOPPOLI_S_HAT = (1.0, 2.0, 4.0)
HARDY_CONSTANT = 4.0
HARDY_NODES = 401
HARDY_REFERENCE_TOL = 0.01


# %% === Exceptions === #
class NestingError(ConfigurationError):
    """Raised when the regions of a Caccioppoli check are not nested as required."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Invalid Caccioppoli regions: {reason}.")


class NonFiniteSumError(NumericalError):
    """Raised when a weighted sum of the harness overflows or turns NaN."""

    def __init__(self, name: str, value: float) -> None:
        self.name = name
        self.value = value
        super().__init__(f"Weighted sum '{name}' is not finite ({value}).")


class EmptyEnsembleError(ConfigurationError):
    """Raised when an ensemble check is asked for no member."""

    def __init__(self, size: int) -> None:
        self.size = size
        super().__init__(f"Ensemble checks need at least one member, got {size}.")


# %% === Reports === #
class InequalityFamily(StrEnum):
    """Inequality families covered by the harness."""

    CARLEMAN_GLOBAL_BOUNDARY_0 = "carleman_boundary0"
    CARLEMAN_GLOBAL_BOUNDARY_1 = "carleman_boundary1"
    CARLEMAN_GLOBAL_INTERIOR = "carleman_interior"
    CARLEMAN_NONDEG = "carleman_nondeg"
    CARLEMAN_LOCAL = "carleman_local"
    OBSERVABILITY = "observability"
    CACCIOPPOLI = "caccioppoli"
    HARDY_POINCARE = "hardy"
    ENERGY_DECAY = "energy_decay"
    DUALITY = "duality"


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else math.inf


@dataclass(frozen=True, kw_only=True)
class InequalityReport:
    """
    Both sides of an inequality over a sweep of parameters.

    Attributes:
        family: Inequality family.
        parameter: Name of the swept parameter (s, member, trial, p or t).
        s_values: Values of the swept parameter.
        lhs: Left-hand sides.
        rhs: Right-hand sides.
        grid_tag: Lattice identifier.
        passed: Outcome of the family criterion.
        criterion: Human readable criterion.
        details: Extra scalars and per-row breakdowns.
    """

    family: InequalityFamily
    parameter: str
    s_values: tuple[float, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]
    grid_tag: str
    passed: bool
    criterion: str
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def ratios(self) -> tuple[float, ...]:
        """lhs / rhs per row, 0 for 0 / 0."""
        return tuple(_ratio(lhs, rhs) for lhs, rhs in zip(self.lhs, self.rhs, strict=True))

    @property
    def effective_constant(self) -> float:
        """Largest ratio, 0 for an empty sweep."""
        return max(self.ratios, default=0.0)

    def table(self) -> pd.DataFrame:
        """Table with one row per swept value."""
        return pd.DataFrame({
            self.parameter: self.s_values,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratios,
        })

    def to_dict(self) -> dict[str, Any]:
        """Serializable form of the report."""
        return {
            "family": self.family,
            "parameter": self.parameter,
            "s_values": list(self.s_values),
            "lhs": list(self.lhs),
            "rhs": list(self.rhs),
            "ratios": list(self.ratios),
            "effective_constant": self.effective_constant,
            "grid_tag": self.grid_tag,
            "pass": self.passed,
            "criterion": self.criterion,
            "details": self.details,
        }


def render_report(report: InequalityReport) -> str:
    """Aligned-column text rendering of a report."""
    table = Table(
        title=f"{report.family} [{report.grid_tag}]",
        caption=(
            f"effective constant {report.effective_constant:.6g}, "
            f"{'PASS' if report.passed else 'FAIL'} ({report.criterion})"
        ),
        box=box.ASCII,
    )
    for column in (report.parameter, "lhs", "rhs", "ratio"):
        table.add_column(column, justify="right")
    for s, lhs, rhs, ratio in zip(
        report.s_values, report.lhs, report.rhs, report.ratios, strict=True
    ):
        table.add_row(f"{s:.6g}", f"{lhs:.6e}", f"{rhs:.6e}", f"{ratio:.6e}")
    console = Console(width=100, color_system=None)
    with console.capture() as capture:
        console.print(table)
    return capture.get()


def refinement_drift(coarse: InequalityReport, fine: InequalityReport) -> float:
    """
    Ratio of the larger to the smaller effective constant of two grid levels.

    Returns 1 when both constants vanish and inf when only one does.
    """
    a, b = coarse.effective_constant, fine.effective_constant
    if a == b:
        return 1.0
    low, high = min(a, b), max(a, b)
    return high / low if low > 0 else math.inf


def drift_ok(coarse: InequalityReport, fine: InequalityReport) -> bool:
    """Whether the effective constant is stable across one refinement level."""
    return refinement_drift(coarse, fine) <= global_settings.REFINEMENT_DRIFT


# %% === Samples === #
@dataclass(frozen=True, kw_only=True, eq=False)
class AdjointSample:
    """
    An adjoint solution v on the lattice with its source f = v_t + v_a + k v_xx - mu v.

    Attributes:
        v: Values on every (t, a, x) node.
        f: Source on every node.
        origin: How the sample was produced.
    """

    v: FloatArray = field(repr=False)
    f: FloatArray = field(repr=False)
    origin: str


def _space_profile(problem: ProblemSetup) -> tuple[FloatArray, FloatArray, FloatArray]:
    """X, X' and X'' of the manufactured solution."""
    x = np.asarray(problem.lattice.x)
    s, c = np.sin(np.pi * x), np.cos(np.pi * x)
    if problem.k.regime.is_interior:
        x0 = problem.k.x0
        assert x0 is not None
        d = x - x0
        return d * s, s + np.pi * d * c, 2 * np.pi * c - np.pi**2 * d * s
    return s, np.pi * c, -(np.pi**2) * s


def manufactured_sample(problem: ProblemSetup) -> AdjointSample:
    """
    Manufactured solution v = t (T - t) a (A - a) X(x) with its exact source.

    X(x) = sin(pi x), multiplied by (x - x0) for interior regimes so that v vanishes at
    the degeneracy point. v vanishes at t = 0, t = T, a = 0 and a = A.
    """
    lattice = problem.lattice
    T, A = problem.T, problem.A
    t = np.asarray(lattice.t)[:, None, None]
    a = np.asarray(lattice.a)[None, :, None]
    space, _, space_xx = (p[None, None, :] for p in _space_profile(problem))
    time, time_t = t * (T - t), T - 2 * t
    age, age_a = a * (A - a), A - 2 * a
    v = time * age * space
    kx = problem.k(lattice.x)[None, None, :]
    mu = problem.rates.mu(t, a, np.asarray(lattice.x)[None, None, :])
    f = time_t * age * space + time * age_a * space + kx * time * age * space_xx - mu * v
    return AdjointSample(v=v, f=np.asarray(f, dtype=np.float64), origin="manufactured")


def adjoint_sample(problem: ProblemSetup, v_T: npt.ArrayLike) -> AdjointSample:
    """
    Discrete adjoint solution from a terminal datum, with the fertility term as source.

    The adjoint system carries + beta(a, x) v(t, 0, x); it is moved to the source as
    f = -beta(a, x) v(t, 0, x).
    """
    trajectory = solve_adjoint_transpose(problem, v_T)
    v = np.array(trajectory.values)
    beta = problem.rates.beta_grid(problem.lattice)
    f = -beta[None, :, :] * v[:, :1, :]
    return AdjointSample(v=v, f=f, origin="adjoint_transpose")


def consistency_defect(problem: ProblemSetup, sample: AdjointSample) -> float:
    """
    Largest defect of the discrete adjoint operator applied to a sample.

    The operator is (v(t + dt, a + da) - v(t, a)) / dt + c_i (v_{i+1} - 2 v_i + v_{i-1})
    - mu v, compared with f on active nodes with t < T and a < A. It vanishes as
    O(dt + h^2) for manufactured solutions.
    """
    lattice = problem.lattice
    v, f = sample.v, sample.f
    transport = (v[1:, 1:] - v[:-1, :-1]) / lattice.dt
    worst = 0.0
    for n in range(lattice.nt):
        mu = problem.rates.mu_slice(float(lattice.t[n]), lattice)
        op = assemble_diffusion(problem.k, mu, lattice, active=problem.active)
        defect = transport[n] + op.apply(v[n])[:-1] - f[n, :-1]
        worst = max(worst, float(np.max(np.abs(defect[:, problem.active]), initial=0.0)))
    return worst


# %% === Carleman helpers === #
_GLOBAL_FAMILIES = {
    WeightKind.PHI_NONDEG: InequalityFamily.CARLEMAN_NONDEG,
    WeightKind.PSI_WEAK_A2: InequalityFamily.CARLEMAN_NONDEG,
    WeightKind.PSI_WEAK_A1: InequalityFamily.CARLEMAN_NONDEG,
    WeightKind.VARPHI_BOUNDARY_0: InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_0,
    WeightKind.VARPHI_BOUNDARY_1: InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_1,
    WeightKind.GAMMA_INTERIOR: InequalityFamily.CARLEMAN_GLOBAL_INTERIOR,
}


def default_weight_kind(k: DispersionCoefficient) -> WeightKind:
    """Weight family matching the regime of k."""
    match k.regime:
        case Regime.BOUNDARY_0:
            return WeightKind.VARPHI_BOUNDARY_0
        case Regime.BOUNDARY_1:
            return WeightKind.VARPHI_BOUNDARY_1
        case Regime.INTERIOR_WEAK | Regime.INTERIOR_STRONG:
            return WeightKind.GAMMA_INTERIOR
        case Regime.NONDEGENERATE:
            return WeightKind.PHI_NONDEG


def scaled_s_values(
    field: WeightField, problem: ProblemSetup, s_hat: Sequence[float] = DEFAULT_S_HAT
) -> tuple[float, ...]:
    """s = s_hat / |W(T/2, A/2, .)|_max, so that 2 s W spans about 2 s_hat at the midpoint."""
    scale = float(theta(problem.T / 2, problem.A / 2, problem.T, problem.A))
    scale *= field.max_abs_profile()
    return tuple(float(s) / scale for s in s_hat)


@dataclass(frozen=True, kw_only=True)
class _Grid:
    """Integration grid of the weighted sums: inner time slices, ages a > 0."""

    t: FloatArray
    a: FloatArray
    measure: float
    trapezoid: FloatArray
    weights: FloatArray

    @classmethod
    def of(cls, problem: ProblemSetup) -> _Grid:
        lattice = problem.lattice
        trapezoid = np.full(lattice.nx, lattice.h)
        trapezoid[[0, -1]] = lattice.h / 2
        return cls(
            t=np.asarray(lattice.t[1:-1])[:, None, None],
            a=np.asarray(lattice.a[1:])[None, :, None],
            measure=lattice.dt * lattice.da,
            trapezoid=trapezoid,
            weights=np.asarray(problem.weights),
        )

    @staticmethod
    def inner(values: FloatArray) -> FloatArray:
        """Restriction of a (t, a, x) field to the grid."""
        return values[1:-1, 1:, :]


def _total(values: FloatArray, space_weights: FloatArray, measure: float, name: str) -> float:
    total = measure * float(np.sum(values * space_weights))
    if not math.isfinite(total):
        raise NonFiniteSumError(name, total)
    return total


def _space_derivative(problem: ProblemSetup, v: FloatArray) -> FloatArray:
    return np.gradient(v, problem.lattice.h, axis=-1, edge_order=2)


def _build_field(
    kind: WeightKind, params: CarlemanParams | None, problem: ProblemSetup
) -> WeightField:
    base = CarlemanParams(s=1.0) if params is None else params
    return WeightField.build(kind, base, problem.k, problem.lattice)


def _carleman_terms(
    field: WeightField,
    problem: ProblemSetup,
    sample: AdjointSample,
    s: float,
    grid: _Grid,
    *,
    with_boundary: bool,
) -> dict[str, float]:
    """Weighted sums of the Carleman estimate at one value of s."""
    weighted = field.with_s(s)
    T, A = problem.T, problem.A
    v = grid.inner(sample.v)
    f = grid.inner(sample.f)
    vx = grid.inner(_space_derivative(problem, sample.v))

    def product(m: int, g: FloatArray) -> FloatArray:
        return log_weighted_product(m, grid.t, grid.a, field=weighted, T=T, A=A, g=g)

    gradient = s * _total(
        product(1, weighted.g1 * vx**2), grid.trapezoid, grid.measure, "gradient"
    )
    zero_order = s**3 * _total(
        product(3, weighted.g3 * v**2), grid.trapezoid, grid.measure, "zero order"
    )
    source_weights = grid.weights if weighted.source_over_k else grid.trapezoid
    source = _total(product(0, f**2), source_weights, grid.measure, "source")
    boundary = 0.0
    if with_boundary:
        c0, c1 = weighted.boundary_coefficients
        edge = product(1, vx**2)
        boundary = s * grid.measure * float(np.sum(c0 * edge[..., 0] + c1 * edge[..., -1]))
    return {
        "gradient": gradient,
        "zero_order": zero_order,
        "source": source,
        "boundary": boundary,
    }


# %% === Checks === #
def check_carleman_global(
    variant: WeightKind,
    problem: ProblemSetup,
    sample: AdjointSample | None = None,
    s_values: Sequence[float] | None = None,
    *,
    params: CarlemanParams | None = None,
) -> InequalityReport:
    """
    Global Carleman estimate with boundary term on an adjoint sample.

    LHS = sum (s Theta g1 v_x^2 + s^3 Theta^3 g3 v^2) e^{2sW}, RHS = sum f^2 e^{2sW}
    (over k for the degenerate weights) plus the boundary term of the weight family.

    Args:
        variant: Weight family, which must match the regime of k.
        problem: Problem data.
        sample: Adjoint solution and source, the manufactured one when omitted.
        s_values: Values of s, the scaled defaults when omitted.
        params: Carleman constants other than s.

    Raises:
        WeightRegimeError: If the family does not match the regime of k.
    """
    field = _build_field(variant, params, problem)
    data = manufactured_sample(problem) if sample is None else sample
    sweep = scaled_s_values(field, problem) if s_values is None else tuple(s_values)
    grid = _Grid.of(problem)
    rows = [
        _carleman_terms(field, problem, data, s, grid, with_boundary=True) for s in sweep
    ]
    lhs = tuple(r["gradient"] + r["zero_order"] for r in rows)
    rhs = tuple(r["source"] + r["boundary"] for r in rows)
    report = InequalityReport(
        family=_GLOBAL_FAMILIES[variant],
        parameter="s",
        s_values=sweep,
        lhs=lhs,
        rhs=rhs,
        grid_tag=problem.lattice.tag,
        passed=False,
        criterion="finite effective constant",
        details={
            "weight": variant,
            "sample": data.origin,
            "notes": list(field.notes),
            "terms": rows,
        },
    )
    return _with_finite_pass(report)


def check_carleman_local(
    variant: WeightKind | None,
    problem: ProblemSetup,
    sample: AdjointSample | None = None,
    s_values: Sequence[float] | None = None,
    *,
    params: CarlemanParams | None = None,
) -> InequalityReport:
    """
    Carleman estimate with an observation on omega instead of the boundary term.

    RHS = sum f^2 e^{2sW} (over k for the degenerate weights) + sum over omega of v^2 / k.
    A None variant selects the weight family of the regime of k.
    """
    kind = default_weight_kind(problem.k) if variant is None else variant
    field = _build_field(kind, params, problem)
    data = manufactured_sample(problem) if sample is None else sample
    sweep = scaled_s_values(field, problem) if s_values is None else tuple(s_values)
    grid = _Grid.of(problem)
    observed = _total(
        grid.inner(data.v) ** 2, grid.weights * problem.omega_mask, grid.measure, "omega"
    )
    rows = [
        _carleman_terms(field, problem, data, s, grid, with_boundary=False) for s in sweep
    ]
    report = InequalityReport(
        family=InequalityFamily.CARLEMAN_LOCAL,
        parameter="s",
        s_values=sweep,
        lhs=tuple(r["gradient"] + r["zero_order"] for r in rows),
        rhs=tuple(r["source"] + observed for r in rows),
        grid_tag=problem.lattice.tag,
        passed=False,
        criterion="finite effective constant",
        details={
            "weight": kind,
            "sample": data.origin,
            "omega": [list(i) for i in problem.omega.intervals],
            "omega_term": observed,
            "terms": rows,
        },
    )
    return _with_finite_pass(report)


def _with_finite_pass(report: InequalityReport) -> InequalityReport:
    constant = report.effective_constant
    passed = math.isfinite(constant) and all(v >= 0 for v in report.lhs)
    if not passed:
        logger.warning(f"{report.family} on {report.grid_tag}: effective constant {constant}")
    return dataclasses.replace(report, passed=passed)


def check_observability(
    problem: ProblemSetup,
    ensemble_size: int = 32,
    delta: float | None = None,
    *,
    seed: int = 0,
    young_data: bool = False,
) -> InequalityReport:
    """
    Observability of the adjoint state at T - abar from omega and the young terminal ages.

    Each member is a random smooth terminal datum supported in (delta, A), plus a part on
    (0, delta) when `young_data` is set. The ratio is
    |v(T - abar)|^2 / (|v_T|^2 on ages below delta + sum over t, a, omega of v^2 / k).

    Raises:
        EmptyEnsembleError: If `ensemble_size` < 1.
    """
    if ensemble_size < 1:
        raise EmptyEnsembleError(ensemble_size)
    lattice = problem.lattice
    margin = problem.delta if delta is None else delta
    delta_index = lattice.age_floor_index(margin)
    snapped = float(lattice.a[delta_index])
    young = (np.arange(lattice.na + 1) <= delta_index)[:, None]
    n_tilde = lattice.time_index(problem.T_tilde)
    time_weights = np.full(lattice.nt + 1, lattice.dt)
    time_weights[[0, -1]] = lattice.dt / 2

    rng = np.random.default_rng(seed)
    propagator = Propagator(problem)
    members: list[float] = []
    lhs: list[float] = []
    rhs: list[float] = []
    filtered = 0
    for member in tqdm(range(ensemble_size), desc="observability", leave=False):
        v_T = random_smooth_field(rng, lattice, problem.active, age_support=(snapped, problem.A))
        if young_data:
            v_T += random_smooth_field(rng, lattice, problem.active, age_support=(0.0, snapped))
        if state_inner(v_T, v_T, problem) == 0:
            filtered += 1
            continue
        v = solve_adjoint_transpose(problem, v_T, propagator=propagator).values
        numerator = state_inner(v[n_tilde], v[n_tilde], problem)
        young_term = state_inner(v_T * young, v_T, problem)
        observed = sum(
            w * state_inner(v[n] * problem.omega_mask, v[n], problem)
            for n, w in enumerate(time_weights)
        )
        members.append(float(member))
        lhs.append(numerator)
        rhs.append(young_term + observed)
    report = InequalityReport(
        family=InequalityFamily.OBSERVABILITY,
        parameter="member",
        s_values=tuple(members),
        lhs=tuple(lhs),
        rhs=tuple(rhs),
        grid_tag=lattice.tag,
        passed=False,
        criterion="finite effective constant",
        details={
            "delta_snapped": snapped,
            "T_tilde": problem.T_tilde,
            "young_data": young_data,
            "filtered": filtered,
            "seed": seed,
        },
    )
    return _with_finite_pass(report)


def check_caccioppoli(
    problem: ProblemSetup,
    omega_inner: ControlRegion,
    omega: ControlRegion | None = None,
    s_values: Sequence[float] | None = None,
    *,
    sample: AdjointSample | None = None,
    params: CarlemanParams | None = None,
) -> InequalityReport:
    """
    Caccioppoli inequality: gradient energy on omega' from zero-order terms on omega.

    The ratio is sum over omega' of v_x^2 e^{2sW} / (sum over omega of v^2 + sum f^2 e^{2sW}).

    Raises:
        NestingError: If omega' is not compactly inside omega, or if the degeneracy point
            of an interior regime lies in the closure of omega.
    """
    outer = problem.omega if omega is None else omega
    if not omega_inner.is_compactly_inside(outer):
        raise NestingError(f"{omega_inner.intervals} is not compactly inside {outer.intervals}")
    z = problem.k.degeneracy_point
    if problem.k.regime.is_interior and z is not None and outer.closure_contains(z):
        raise NestingError(f"the degeneracy point {z} lies in the closure of {outer.intervals}")

    field = _build_field(default_weight_kind(problem.k), params, problem)
    data = manufactured_sample(problem) if sample is None else sample
    sweep = (
        scaled_s_values(field, problem, CACCIOPPOLI_S_HAT) if s_values is None else tuple(s_values)
    )
    grid = _Grid.of(problem)
    x = problem.lattice.x
    inner_weights = grid.trapezoid * omega_inner.mask(x)
    outer_weights = grid.trapezoid * outer.mask(x)
    v = grid.inner(data.v)
    f = grid.inner(data.f)
    vx = grid.inner(_space_derivative(problem, data.v))
    zero_order = _total(v**2, outer_weights, grid.measure, "omega")

    lhs: list[float] = []
    rhs: list[float] = []
    for s in sweep:
        # m = 0 with g = 1 gives e^{2sW} alone
        exponential = log_weighted_product(
            0, grid.t, grid.a, field=field.with_s(s), T=problem.T, A=problem.A
        )
        lhs.append(_total(exponential * vx**2, inner_weights, grid.measure, "gradient"))
        rhs.append(
            zero_order + _total(exponential * f**2, grid.trapezoid, grid.measure, "source")
        )
    report = InequalityReport(
        family=InequalityFamily.CACCIOPPOLI,
        parameter="s",
        s_values=sweep,
        lhs=tuple(lhs),
        rhs=tuple(rhs),
        grid_tag=problem.lattice.tag,
        passed=False,
        criterion="finite effective constant",
        details={
            "omega_inner": [list(i) for i in omega_inner.intervals],
            "omega": [list(i) for i in outer.intervals],
            "sample": data.origin,
        },
    )
    return _with_finite_pass(report)


# === Hardy-Poincare === #
def hardy_exponents(size: int) -> FloatArray:
    """Exponents p of the test family x^p (1 - x), from 1 down to 0.55."""
    return np.linspace(1.0, 0.55, max(size, 1))


def hardy_quadrature_ratio(p: float) -> float:
    """
    Continuous ratio (integral of v^2 / x^2) / (integral of v_x^2) for v = x^p (1 - x).

    Both integrands carry the endpoint singularity x^(2p - 2), handled by the algebraic
    weight of QUADPACK.
    """
    tol = global_settings.QUAD_EPSREL
    numerator, _ = integrate.quad(
        lambda x: 1.0, 0.0, 1.0, weight="alg", wvar=(2 * p - 2, 2.0), epsrel=tol
    )
    denominator, _ = integrate.quad(
        lambda x: (p - (p + 1) * x) ** 2, 0.0, 1.0, weight="alg", wvar=(2 * p - 2, 0.0), epsrel=tol
    )
    return numerator / denominator


def hardy_discrete_terms(v: FloatArray, x: FloatArray) -> tuple[float, float]:
    """
    Discrete sums (sum_{i >= 1} v_i^2 / x_i^2 h, sum_i ((v_{i+1} - v_i) / h)^2 h).

    With v_0 = 0 the ratio of the two sums never exceeds 4.
    """
    h = float(x[1] - x[0])
    numerator = float(np.sum(v[1:] ** 2 / x[1:] ** 2)) * h
    denominator = float(np.sum(np.diff(v) ** 2)) / h
    return numerator, denominator


def _hardy_profile(x: FloatArray, z: float | None, p: float) -> FloatArray:
    match z:
        case 0.0:
            return x**p * (1 - x)
        case 1.0:
            return x * (1 - x) ** p
        case None:
            return x * (1 - x)
        case _:
            return x * (1 - x) * np.abs(x - z) ** p


def hardy_weighted_terms(
    k: DispersionCoefficient, p: float, nx: int = HARDY_NODES
) -> tuple[float, float]:
    """
    Discrete sums (sum v^2 / k, sum v_x^2) for a test function vanishing at the zero of k.

    The 1/k sum uses exact cell integrals of 1/k; nodes where v vanishes are skipped.
    """
    x = np.linspace(0.0, 1.0, nx)
    h = 1.0 / (nx - 1)
    v = _hardy_profile(x, k.degeneracy_point, p)
    keep = v != 0
    lo = np.clip(x[keep] - h / 2, 0.0, 1.0)
    hi = np.clip(x[keep] + h / 2, 0.0, 1.0)
    numerator = float(np.sum(v[keep] ** 2 * k.inverse_integral(lo, hi)))
    denominator = float(np.sum(np.diff(v) ** 2)) / h
    return numerator, denominator


def check_hardy(
    k_variant: DispersionCoefficient | None = None,
    test_family_size: int = 10,
    *,
    nx: int = HARDY_NODES,
) -> InequalityReport:
    """
    Hardy-Poincare inequality: integral of v^2 / x^2 <= 4 integral of v_x^2.

    The family x^p (1 - x), p from 1 down to 0.55, approaches the extremal of the constant
    4. Each member is evaluated by discrete sums on `nx` nodes and by quadrature; the check
    passes when both stay below 4 (1 + HARDY_SLACK) and v = x (1 - x) gives a discrete
    ratio within 0.01 of 1. With `k_variant`, the weighted ratio (sum v^2 / k) / (sum v_x^2)
    is also reported and must be finite.
    """
    x = np.linspace(0.0, 1.0, nx)
    exponents = hardy_exponents(test_family_size)
    lhs: list[float] = []
    rhs: list[float] = []
    quadrature: list[float] = []
    for p in exponents:
        numerator, denominator = hardy_discrete_terms(x**p * (1 - x), x)
        lhs.append(numerator)
        rhs.append(denominator)
        quadrature.append(hardy_quadrature_ratio(float(p)))
    ref_num, ref_den = hardy_discrete_terms(x * (1 - x), x)
    reference = _ratio(ref_num, ref_den)

    bound = HARDY_CONSTANT * (1 + global_settings.HARDY_SLACK)
    details: dict[str, Any] = {
        "nx": nx,
        "bound": bound,
        "quadrature_ratios": quadrature,
        "reference_ratio": reference,
    }
    weighted_ok = True
    if k_variant is not None:
        weighted = [_ratio(*hardy_weighted_terms(k_variant, float(p), nx)) for p in exponents]
        weighted_ok = all(math.isfinite(r) for r in weighted)
        details["weighted_regime"] = k_variant.regime
        details["weighted_ratios"] = weighted

    report = InequalityReport(
        family=InequalityFamily.HARDY_POINCARE,
        parameter="p",
        s_values=tuple(float(p) for p in exponents),
        lhs=tuple(lhs),
        rhs=tuple(rhs),
        grid_tag=f"{nx}",
        passed=False,
        criterion=f"max ratio <= {bound:g}, x(1-x) ratio within {HARDY_REFERENCE_TOL} of 1",
        details=details,
    )
    passed = (
        report.effective_constant <= bound
        and max(quadrature) <= bound
        and abs(reference - 1.0) <= HARDY_REFERENCE_TOL
        and weighted_ok
    )
    return dataclasses.replace(report, passed=passed)


def check_energy_decay(problem: ProblemSetup, y0: npt.ArrayLike | None = None) -> InequalityReport:
    """
    Decay of |u(t)|^2 for the zero-renewal system without control, with implicit Euler.

    Rows compare consecutive slices: lhs = |u(t_{n+1})|^2, rhs = |u(t_n)|^2. The check
    passes when the largest relative increment is at most ENERGY_TOL.
    """
    trajectory = solve_forward(
        problem,
        y0=y0,
        renewal=Renewal.ZERO,
        propagator=Propagator(problem, Scheme.IMPLICIT_EULER),
    )
    energy = energy_profile(trajectory, problem)
    increment = max_energy_increment(trajectory, problem)
    passed = increment <= global_settings.ENERGY_TOL
    if not passed:
        logger.warning(f"Energy increased by {increment:.3e} (relative) on {problem.lattice.tag}")
    return InequalityReport(
        family=InequalityFamily.ENERGY_DECAY,
        parameter="t",
        s_values=tuple(float(t) for t in trajectory.times[1:]),
        lhs=tuple(float(e) for e in energy[1:]),
        rhs=tuple(float(e) for e in energy[:-1]),
        grid_tag=problem.lattice.tag,
        passed=passed,
        criterion=f"max relative increment <= {global_settings.ENERGY_TOL:g}",
        details={
            "max_increment": increment,
            "initial_energy": float(energy[0]),
            "final_energy": float(energy[-1]),
        },
    )


def duality_residual(
    problem: ProblemSetup,
    y0: FloatArray,
    f: FloatArray,
    g: FloatArray,
    *,
    t_start: float = 0.0,
    propagator: Propagator | None = None,
) -> tuple[float, float]:
    """
    Defect of <y(T), g> = <y0, v_g(t_start)> + sum_n dt <chi_omega f^n, v_g^n>.

    Returns:
        The absolute defect and the sum of the absolute values of the three terms.
    """
    prop = Propagator(problem) if propagator is None else propagator
    y = solve_forward(problem, f, y0, t_start=t_start, propagator=prop)
    v = solve_adjoint_transpose(problem, g, t_start=t_start, propagator=prop)
    terminal = state_inner(y.final, g, problem)
    initial = state_inner(y0 * problem.active, v.initial, problem)
    dt = problem.lattice.dt
    forcing = dt * sum(
        state_inner(f[m] * problem.omega_mask, v.values[m], problem) for m in range(1, len(f))
    )
    return abs(terminal - initial - forcing), abs(terminal) + abs(initial) + abs(forcing)


def check_duality(
    problem: ProblemSetup, trials: int = 20, *, seed: int = 0, t_start: float | None = None
) -> InequalityReport:
    """
    Discrete duality between the forward and the transposed adjoint solver.

    Random (y0, f, g) on the window [t_start, T], with g supported in the target ages.
    Every second trial has f = 0, isolating the pairing of y0 with v_g(t_start). Rows hold
    the absolute defect and the scale of the terms; the check passes when the largest
    relative defect is at most DUALITY_TOL.
    """
    lattice = problem.lattice
    start = problem.T_tilde if t_start is None else t_start
    n0 = lattice.time_index(start)
    shape = lattice.slice_shape
    target = problem.target_ages[:, None] & problem.active[None, :]
    rng = np.random.default_rng(seed)
    propagator = Propagator(problem)
    defects: list[float] = []
    scales: list[float] = []
    for trial in range(trials):
        y0 = rng.standard_normal(shape) * problem.active
        g = rng.standard_normal(shape) * target
        f = rng.standard_normal((lattice.nt - n0 + 1, *shape))
        f[0] = 0.0
        if trial % 2:
            f[:] = 0.0
        defect, scale = duality_residual(problem, y0, f, g, t_start=start, propagator=propagator)
        defects.append(defect)
        scales.append(scale)
    report = InequalityReport(
        family=InequalityFamily.DUALITY,
        parameter="trial",
        s_values=tuple(float(i) for i in range(trials)),
        lhs=tuple(defects),
        rhs=tuple(scales),
        grid_tag=lattice.tag,
        passed=False,
        criterion=f"max relative defect <= {global_settings.DUALITY_TOL:g}",
        details={"t_start": start, "seed": seed},
    )
    passed = report.effective_constant <= global_settings.DUALITY_TOL
    return dataclasses.replace(report, passed=passed)


# %% === Solver convergence === #
type ProblemFactory = Callable[[int, int], ProblemSetup]

TEMPORAL_ORDER_MIN = 1.9
SPATIAL_ORDER_MIN = 1.9
ADJOINT_ORDER_MIN = 1.0


def nondegenerate_benchmark(nx: int, nt: int) -> ProblemSetup:
    """Separable nondegenerate problem without fertility, solved with Crank-Nicolson."""
    return reference_problem(
        Scenario.NONDEGENERATE,
        nx=nx,
        nt=nt,
        scheme=Scheme.CRANK_NICOLSON,
        beta=BetaPreset(kind=BetaKind.ZERO),
    )


def adjoint_benchmark(nx: int, nt: int) -> ProblemSetup:
    """Nondegenerate problem with the default fertility bump, solved with implicit Euler."""
    return reference_problem(Scenario.NONDEGENERATE, nx=nx, nt=nt)


@dataclass(frozen=True, kw_only=True)
class ConvergenceStudy:
    """
    Differences between successive lattice levels and the orders they imply.

    Attributes:
        name: Quantity refined.
        levels: Tags of the lattices, coarse to fine, one per difference.
        differences: Sup-differences, one per level.
        threshold: Smallest accepted order on the finest step.
    """

    name: str
    levels: tuple[str, ...]
    differences: tuple[float, ...]
    threshold: float

    @property
    def orders(self) -> tuple[float, ...]:
        """log2 of the ratios of consecutive differences."""
        return tuple(
            math.log2(coarse / fine) if coarse > 0 and fine > 0 else math.inf
            for coarse, fine in itertools.pairwise(self.differences)
        )

    @property
    def observed_order(self) -> float:
        """Order of the finest step."""
        return self.orders[-1] if self.orders else math.nan

    @property
    def passed(self) -> bool:
        """Whether the finest order reaches the threshold."""
        return self.observed_order >= self.threshold

    def table(self) -> pd.DataFrame:
        """One row per level; the first level has no order."""
        return pd.DataFrame({
            "level": self.levels,
            "difference": self.differences,
            "order": (math.nan, *self.orders),
        })

    def to_dict(self) -> dict[str, Any]:
        """Serializable form of the study."""
        return {
            "name": self.name,
            "levels": list(self.levels),
            "differences": list(self.differences),
            "orders": list(self.orders),
            "observed_order": self.observed_order,
            "threshold": self.threshold,
            "pass": self.passed,
        }


def _on_coarse_nodes(values: FloatArray, fine: Lattice, coarse: Lattice) -> FloatArray:
    """(age x space) field of the fine lattice sampled on the coarse nodes."""
    age_stride = fine.na // coarse.na
    space_stride = (fine.nx - 1) // (coarse.nx - 1)
    return values[::age_stride, ::space_stride]


def _richardson_differences(problems: Sequence[ProblemSetup]) -> tuple[float, ...]:
    finals = [solve_forward(p).final for p in problems]
    return tuple(
        float(np.max(np.abs(_on_coarse_nodes(fine, pf.lattice, pc.lattice) - coarse)))
        for (pc, coarse), (pf, fine) in itertools.pairwise(zip(problems, finals, strict=True))
    )


def temporal_order(
    factory: ProblemFactory = nondegenerate_benchmark,
    nt_levels: Sequence[int] = (8, 16, 32, 64),
    *,
    nx: int = 33,
) -> ConvergenceStudy:
    """Observed order in time of the forward solver, space lattice fixed."""
    problems = [factory(nx, nt) for nt in nt_levels]
    return ConvergenceStudy(
        name="temporal",
        levels=tuple(p.lattice.tag for p in problems[:-1]),
        differences=_richardson_differences(problems),
        threshold=TEMPORAL_ORDER_MIN,
    )


def spatial_order(
    factory: ProblemFactory = nondegenerate_benchmark,
    nx_levels: Sequence[int] = (9, 17, 33, 65),
    *,
    nt: int = 16,
) -> ConvergenceStudy:
    """Observed order in space of the forward solver, time lattice fixed."""
    problems = [factory(nx, nt) for nx in nx_levels]
    return ConvergenceStudy(
        name="spatial",
        levels=tuple(p.lattice.tag for p in problems[:-1]),
        differences=_richardson_differences(problems),
        threshold=SPATIAL_ORDER_MIN,
    )


def adjoint_agreement(
    factory: ProblemFactory = adjoint_benchmark,
    levels: Sequence[tuple[int, int]] = ((9, 8), (17, 16), (33, 32), (65, 64)),
) -> ConvergenceStudy:
    """
    Sup-difference at t = 0 between the characteristics and the transposed adjoint.

    Both start from v_T = sin^2 bump on (delta, A) times sin(pi x); the differences
    themselves are reported, so the order measures how fast they vanish.
    """
    problems = [factory(nx, nt) for nx, nt in levels]
    differences = []
    for problem in problems:
        lattice = problem.lattice
        datum = (
            sin2_bump(np.asarray(lattice.a), problem.delta, problem.A)[:, None]
            * np.sin(np.pi * np.asarray(lattice.x))[None, :]
        )
        propagator = Propagator(problem)
        transpose = solve_adjoint_transpose(problem, datum, propagator=propagator)
        characteristics = characteristics_adjoint(problem, datum, propagator=propagator)
        differences.append(float(np.max(np.abs(characteristics.initial - transpose.initial))))
    return ConvergenceStudy(
        name="adjoint_agreement",
        levels=tuple(p.lattice.tag for p in problems),
        differences=tuple(differences),
        threshold=ADJOINT_ORDER_MIN,
    )
