"""
Named analytic families for the rates and the initial datum, and reference scenarios.

Experiment files select a family by name and give its numeric parameters; no arbitrary
expressions are evaluated.
"""

from __future__ import annotations

from enum import StrEnum
from typing import TYPE_CHECKING

import attrs
import numpy as np
from numpy.polynomial import polynomial

from degenpop.model import (
    ControlRegion,
    DispersionCoefficient,
    Lattice,
    ProblemSetup,
    Rates,
    Regime,
    Scheme,
)

if TYPE_CHECKING:
    from degenpop.model import BoolArray, DeathRate, Fertility, FloatArray


# %% === Death rate === #
class MuKind(StrEnum):
    """Families of death rates."""

    CONSTANT = "constant"
    POLYNOMIAL_AGE = "polynomial_age"


@attrs.define(kw_only=True, frozen=True)
class MuPreset:
    """
    Death rate mu(t, a, x).

    Attributes:
        kind: Family.
        value: Constant value of the `constant` family.
        coefficients: Coefficients c_0, c_1, ... of sum c_i a^i for `polynomial_age`.
    """

    kind: MuKind = MuKind.CONSTANT
    value: float = attrs.field(default=0.1, validator=attrs.validators.ge(0.0))
    coefficients: tuple[float, ...] = ()

    def build(self) -> DeathRate:
        """Vectorized mu(t, a, x)."""
        value = self.value
        coefficients = np.asarray(self.coefficients or (0.0,), dtype=np.float64)
        kind = self.kind

        def mu(t: object, a: object, x: object) -> FloatArray:
            del t
            shape = np.broadcast_shapes(np.shape(a), np.shape(x))
            if kind is MuKind.CONSTANT:
                return np.full(shape, value)
            return np.broadcast_to(polynomial.polyval(np.asarray(a), coefficients), shape)

        return mu

    def describe(self) -> str:
        """Short label used in reports."""
        if self.kind is MuKind.CONSTANT:
            return f"mu={self.value:g}"
        return f"mu=poly{list(self.coefficients)}"


# %% === Fertility === #
class BetaKind(StrEnum):
    """Families of fertility rates, all vanishing for a <= abar."""

    ZERO = "zero"
    GAUSSIAN = "gaussian"
    POLYNOMIAL_AGE = "polynomial_age"


@attrs.define(kw_only=True, frozen=True)
class BetaPreset:
    """
    Fertility beta(a, x), cut off below the onset abar.

    Attributes:
        kind: Family.
        amplitude: Peak value of the `gaussian` family.
        center: Center of the `gaussian` family, (abar + A) / 2 when omitted.
        width: Standard deviation of the `gaussian` family.
        coefficients: Coefficients c_0, c_1, ... of sum c_i a^i for `polynomial_age`.
    """

    kind: BetaKind = BetaKind.GAUSSIAN
    amplitude: float = attrs.field(default=1.0, validator=attrs.validators.ge(0.0))
    center: float | None = None
    width: float = attrs.field(default=0.2, validator=attrs.validators.gt(0.0))
    coefficients: tuple[float, ...] = ()

    def build(self, abar: float, A: float) -> Fertility:
        """Vectorized beta(a, x)."""
        kind = self.kind
        center = (abar + A) / 2 if self.center is None else self.center
        amplitude, width = self.amplitude, self.width
        coefficients = np.asarray(self.coefficients or (0.0,), dtype=np.float64)

        def beta(a: object, x: object) -> FloatArray:
            ages = np.asarray(a, dtype=np.float64)
            shape = np.broadcast_shapes(ages.shape, np.shape(x))
            match kind:
                case BetaKind.ZERO:
                    return np.zeros(shape)
                case BetaKind.GAUSSIAN:
                    values = amplitude * np.exp(-((ages - center) ** 2) / (2 * width**2))
                case BetaKind.POLYNOMIAL_AGE:
                    values = polynomial.polyval(ages, coefficients)
            return np.broadcast_to(np.where(ages > abar, values, 0.0), shape)

        return beta

    def describe(self) -> str:
        """Short label used in reports."""
        match self.kind:
            case BetaKind.ZERO:
                return "beta=0"
            case BetaKind.GAUSSIAN:
                return f"beta=gauss(amp={self.amplitude:g}, width={self.width:g})"
            case BetaKind.POLYNOMIAL_AGE:
                return f"beta=poly{list(self.coefficients)}"


# %% === Initial datum === #
class InitialKind(StrEnum):
    """Families of initial data."""

    ZERO = "zero"
    SEPARABLE_GAUSSIAN = "separable_gaussian"
    SEPARABLE_MODE = "separable_mode"


@attrs.define(kw_only=True, frozen=True)
class InitialPreset:
    """
    Initial datum y0(a, x) = amplitude * g(a) * sin(q pi x).

    Attributes:
        kind: Family: `separable_gaussian` uses a Gaussian g centered at `age_center`,
            `separable_mode` the sin^2 bump of [0, age_center + 2 age_width].
        amplitude: Scale of the datum.
        age_center: Center of the age profile.
        age_width: Width of the age profile.
        mode: Space frequency q.
    """

    kind: InitialKind = InitialKind.SEPARABLE_GAUSSIAN
    amplitude: float = 1.0
    age_center: float = attrs.field(default=0.5, validator=attrs.validators.ge(0.0))
    age_width: float = attrs.field(default=0.2, validator=attrs.validators.gt(0.0))
    mode: int = attrs.field(default=1, validator=attrs.validators.ge(1))

    def build(self, lattice: Lattice) -> FloatArray:
        """Datum sampled on the (age x space) nodes."""
        a = np.asarray(lattice.a)[:, None]
        space = np.sin(self.mode * np.pi * np.asarray(lattice.x))[None, :]
        match self.kind:
            case InitialKind.ZERO:
                return np.zeros(lattice.slice_shape)
            case InitialKind.SEPARABLE_GAUSSIAN:
                age = np.exp(-((a - self.age_center) ** 2) / (2 * self.age_width**2))
            case InitialKind.SEPARABLE_MODE:
                age = sin2_bump(a, 0.0, self.age_center + 2 * self.age_width)
        values = self.amplitude * age * space
        values[:, [0, -1]] = 0.0
        return values


def sin2_bump(a: FloatArray, lo: float, hi: float) -> FloatArray:
    """sin^2 bump supported in (lo, hi), exactly zero outside."""
    inside = (a > lo) & (a < hi)
    return np.where(inside, np.sin(np.pi * (a - lo) / (hi - lo)) ** 2, 0.0)


def random_smooth_field(
    rng: np.random.Generator,
    lattice: Lattice,
    active: BoolArray,
    *,
    age_support: tuple[float, float] | None = None,
    n_modes: int = 3,
) -> FloatArray:
    """
    Random smooth (age x space) field, zero outside `age_support` and on inactive nodes.

    The field is a sin^2 bump in age times random combinations of the space modes
    sin(q pi x), q = 1..n_modes, with coefficients varying linearly in a cosine of age.
    """
    lo, hi = (0.0, lattice.A) if age_support is None else age_support
    a = np.asarray(lattice.a)
    x = np.asarray(lattice.x)
    envelope = sin2_bump(a, lo, hi)
    phase = np.cos(np.pi * np.clip((a - lo) / (hi - lo), 0.0, 1.0))
    coefficients = rng.standard_normal((n_modes, 2))
    field = np.zeros(lattice.slice_shape)
    for q in range(n_modes):
        age = coefficients[q, 0] + coefficients[q, 1] * phase
        field += (envelope * age)[:, None] * np.sin((q + 1) * np.pi * x)[None, :] / (q + 1)
    return field * active[None, :]


# %% === Reference scenarios === #
class Scenario(StrEnum):
    """Bundled reference scenarios."""

    BOUNDARY = "boundary"
    INTERIOR = "interior"
    NONDEGENERATE = "nondegenerate"


def reference_problem(
    scenario: Scenario = Scenario.BOUNDARY,
    *,
    nx: int = 65,
    nt: int = 64,
    scheme: Scheme = Scheme.IMPLICIT_EULER,
    beta: BetaPreset | None = None,
    initial: InitialPreset | None = None,
) -> ProblemSetup:
    """
    Desk-scale control scenario with T = 1, A = 2, abar = 0.5, delta = 1.5 and mu = 0.1.

    `boundary` uses k = x^0.5 and omega = (0.3, 0.8), `interior` uses k = |x - 0.5|^0.5
    and omega = (0.2, 0.4) U (0.6, 0.8), `nondegenerate` uses k = 1 + x and omega =
    (0.3, 0.8).
    """
    T, A, abar = 1.0, 2.0, 0.5
    lattice = Lattice.build(T=T, A=A, nx=nx, nt=nt)
    match scenario:
        case Scenario.BOUNDARY:
            k = DispersionCoefficient.power_law(Regime.BOUNDARY_0, 0.5)
            omega = ControlRegion.of((0.3, 0.8))
        case Scenario.INTERIOR:
            k = DispersionCoefficient.power_law(Regime.INTERIOR_WEAK, 0.5, x0=0.5)
            omega = ControlRegion.of((0.2, 0.4), (0.6, 0.8))
        case Scenario.NONDEGENERATE:
            k = DispersionCoefficient.from_affine(1.0, 1.0)
            omega = ControlRegion.of((0.3, 0.8))
    mu = MuPreset(value=0.1)
    beta_preset = BetaPreset() if beta is None else beta
    initial_preset = InitialPreset() if initial is None else initial
    rates = Rates(
        mu=mu.build(),
        beta=beta_preset.build(abar, A),
        abar=abar,
        label=f"{mu.describe()}, {beta_preset.describe()}",
    )
    return ProblemSetup(
        T=T,
        A=A,
        rates=rates,
        k=k,
        delta=1.5,
        omega=omega,
        lattice=lattice,
        y0=initial_preset.build(lattice),
        scheme=scheme,
    )
