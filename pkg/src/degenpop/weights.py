"""
Carleman weight functions.

Every weight has the form W(t, a, x) = Theta(t, a) * psi(x) where

    Theta(t, a) = 1 / (t^4 (T - t)^4 a^4)

blows up on the boundary of the time-age domain and psi < 0 is a spatial profile
depending on the degeneracy regime. Products such as Theta^3 G(x) e^{2 s W} are never
formed directly: `log_weighted_product` composes them in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import attrs
import numpy as np
from scipy import integrate

from degenpop.config import global_settings
from degenpop.model import (
    ConfigurationError,
    DomainError,
    HypothesisError,
    Regime,
)

if TYPE_CHECKING:
    from collections.abc import Callable

    import numpy.typing as npt

    from degenpop.model import DispersionCoefficient, FloatArray, Lattice


# %% === Exceptions === #
class SingularityError(DomainError):
    """Raised when Theta is evaluated on its singular set."""

    def __init__(self, t: npt.ArrayLike, a: npt.ArrayLike, T: float, A: float) -> None:
        self.T = T
        self.A = A
        super().__init__(
            f"Theta is singular outside of 0 < t < {T}, 0 < a <= {A} "
            f"(got t in [{np.min(t)}, {np.max(t)}], a in [{np.min(a)}, {np.max(a)}]); "
            "use log_weighted_product for boundary-adjacent evaluations."
        )


class SingularCoefficientError(HypothesisError):
    """Raised when sigma is requested on an interval where k vanishes."""

    def __init__(self, x: float, reason: str) -> None:
        self.x = x
        super().__init__(f"sigma is undefined from x={x} to 1: {reason}.")


class DivergentWeightError(HypothesisError):
    """Raised when a weight integral diverges because M >= 2."""

    def __init__(self, name: str, m: float) -> None:
        self.name = name
        self.m = m
        super().__init__(f"The integral defining {name} diverges for M = {m} (needs M < 2).")


class ParameterError(ConfigurationError):
    """Raised when a Carleman parameter violates its admissibility bound."""

    def __init__(self, name: str, value: float, bound: str) -> None:
        self.name = name
        self.value = value
        super().__init__(f"Carleman parameter {name}={value} is not admissible: {bound}.")


class WeightRegimeError(ConfigurationError):
    """Raised when a weight family is used with a coefficient of another regime."""

    def __init__(self, kind: WeightKind | str, regime: Regime) -> None:
        self.kind = kind
        self.regime = regime
        super().__init__(f"Weight '{kind}' does not apply to a {regime} coefficient.")


# %% === Parameters === #
def _positive(inst: object, attribute: attrs.Attribute[float], value: float) -> None:
    del inst
    if not value > 0:
        raise ParameterError(attribute.name, value, "must be positive")


def _optional_positive(
    inst: object, attribute: attrs.Attribute[float | None], value: float | None
) -> None:
    del inst
    if value is not None and not value > 0:
        raise ParameterError(attribute.name, value, "must be positive")


def _nonnegative(inst: object, attribute: attrs.Attribute[float], value: float) -> None:
    del inst
    if value < 0:
        raise ParameterError(attribute.name, value, "must be nonnegative")


@attrs.define(kw_only=True, frozen=True)
class CarlemanParams:
    """
    Free constants of the Carleman weights.

    `s` is always explicit. Offsets left to None are chosen when the weight field is built:
    d2 from its lower bound and the offset of the weak weights from the profile maximum.

    Attributes:
        s: Carleman parameter.
        R: Gaussian exponent of the degenerate profiles.
        kappa: Exponent of the nondegenerate weight.
        r: Exponent of the weak-regularity weights.
        d1: Scale of the interior profile.
        d2: Offset of the interior profile.
        c_frak: Offset of the weak-regularity weights.
        g0: Constant value of g in the (a1) weight.
        h0: Constant h0 of the (a1) weight.
        K: Constant of the d2 bound; only K = M is accepted.
    """

    s: float = attrs.field(validator=_positive)
    R: float = attrs.field(default=1.0, validator=_nonnegative)
    kappa: float = attrs.field(default=1.0, validator=_positive)
    r: float = attrs.field(default=1.0, validator=_positive)
    d1: float = attrs.field(default=1.0, validator=_positive)
    d2: float | None = attrs.field(default=None, validator=_optional_positive)
    c_frak: float | None = attrs.field(default=None, validator=_optional_positive)
    g0: float = attrs.field(default=1.0, validator=_positive)
    h0: float = attrs.field(default=1.0, validator=_positive)
    K: float | None = None


class WeightKind(StrEnum):
    """Weight families."""

    PHI_NONDEG = "phi_nondeg"
    VARPHI_BOUNDARY_0 = "varphi_boundary0"
    VARPHI_BOUNDARY_1 = "varphi_boundary1"
    GAMMA_INTERIOR = "gamma_interior"
    PSI_WEAK_A2 = "psi_weak_a2"
    PSI_WEAK_A1 = "psi_weak_a1"


# %% === Time-age factor === #
def _check_open(t: FloatArray, a: FloatArray, T: float, A: float) -> None:
    if np.any((t <= 0) | (t >= T)) or np.any((a <= 0) | (a > A)):
        raise SingularityError(t, a, T, A)


def log_theta(t: npt.ArrayLike, a: npt.ArrayLike, T: float, A: float) -> FloatArray:
    """
    Logarithm of Theta on the open time-age domain.

    Raises:
        SingularityError: If t is not in (0, T) or a is not in (0, A].
    """
    t_arr = np.asarray(t, dtype=np.float64)
    a_arr = np.asarray(a, dtype=np.float64)
    _check_open(t_arr, a_arr, T, A)
    return -4.0 * (np.log(t_arr) + np.log(T - t_arr) + np.log(a_arr))


def theta(t: npt.ArrayLike, a: npt.ArrayLike, T: float, A: float) -> FloatArray:
    """
    Time-age factor 1 / (t^4 (T - t)^4 a^4).

    Raises:
        SingularityError: If t is not in (0, T) or a is not in (0, A].
    """
    return np.exp(log_theta(t, a, T, A))


# %% === Spatial integrals === #
def _cumulative_quad(
    integrand: Callable[[float], float], start: float, points: FloatArray
) -> FloatArray:
    """Integral of `integrand` from `start` to each point, accumulated outwards from `start`."""
    flat = np.atleast_1d(np.asarray(points, dtype=np.float64)).ravel()
    order = np.argsort(np.abs(flat - start), kind="stable")
    sorted_points = flat[order]
    pieces = np.empty(sorted_points.shape)
    previous = start
    for i, point in enumerate(sorted_points):
        if point == previous:
            pieces[i] = 0.0
        else:
            pieces[i], _ = integrate.quad(
                integrand, previous, point, epsrel=global_settings.QUAD_EPSREL, limit=200
            )
        previous = point
    out = np.empty(flat.shape)
    out[order] = np.cumsum(pieces)
    return out.reshape(np.shape(points))


def _distance_integral(alpha: float, R: float, d: FloatArray) -> FloatArray:
    """Integral of s^(1 - alpha) e^(R s^2) from 0 to d, for d >= 0 and alpha < 2."""
    if R == 0:
        return d ** (2 - alpha) / (2 - alpha)
    return _cumulative_quad(lambda s: s ** (1 - alpha) * math.exp(R * s * s), 0.0, d)


def _require_regime(k: DispersionCoefficient, kind: WeightKind, *regimes: Regime) -> None:
    if k.regime not in regimes:
        raise WeightRegimeError(kind, k.regime)


def _require_m_below_two(k: DispersionCoefficient, name: str) -> None:
    if not k.m_const < 2:
        raise DivergentWeightError(name, k.m_const)


def _as_output(values: FloatArray) -> FloatArray:
    return values[()] if values.ndim == 0 else values


def sigma(k: DispersionCoefficient, x: npt.ArrayLike) -> FloatArray:
    """
    sigma(x) = d * integral of 1/k from x to 1, with d = sup |k'|.

    Raises:
        SingularCoefficientError: If k vanishes on [x, 1] or k' is unbounded.
    """
    xs = np.asarray(x, dtype=np.float64)
    lowest = float(np.min(xs))
    z = k.degeneracy_point
    if z is not None and z >= lowest:
        raise SingularCoefficientError(lowest, f"k vanishes at {z}")
    if k.custom is not None:
        samples = np.linspace(lowest, 1.0, global_settings.HYPOTHESIS_SAMPLES)
        if np.min(k(samples)) <= 0:
            raise SingularCoefficientError(lowest, "k is not positive")
    d_frak = k.d_frak
    if not math.isfinite(d_frak):
        raise SingularCoefficientError(lowest, "k' is unbounded")
    return _as_output(d_frak * k.inverse_integral(xs, np.ones_like(xs)))


def p_weight(k: DispersionCoefficient, R: float, x: npt.ArrayLike) -> FloatArray:
    """
    p(x) = integral from 0 to x of y e^(R y^2) / k(y) for k degenerate at 0.

    Raises:
        WeightRegimeError: If k is not in the boundary0 regime.
        DivergentWeightError: If M >= 2.
    """
    _require_regime(k, WeightKind.VARPHI_BOUNDARY_0, Regime.BOUNDARY_0)
    _require_m_below_two(k, "p")
    xs = np.asarray(x, dtype=np.float64)
    if k.is_power_law:
        return _as_output(_distance_integral(k.alpha, R, xs))
    return _as_output(
        _cumulative_quad(lambda y: y * math.exp(R * y * y) / float(k(y)), 0.0, xs.ravel()).reshape(
            xs.shape
        )
    )


def pbar_weight(k: DispersionCoefficient, R: float, x: npt.ArrayLike) -> FloatArray:
    """
    pbar(x) = integral from 0 to x of (y - 1) e^(R (y - 1)^2) / k(y) for k degenerate at 1.

    Raises:
        WeightRegimeError: If k is not in the boundary1 regime.
        DivergentWeightError: If M >= 2.
    """
    _require_regime(k, WeightKind.VARPHI_BOUNDARY_1, Regime.BOUNDARY_1)
    _require_m_below_two(k, "pbar")
    xs = np.asarray(x, dtype=np.float64)
    if k.is_power_law:
        full = _distance_integral(k.alpha, R, np.array(1.0))
        return _as_output(-(full - _distance_integral(k.alpha, R, 1.0 - xs)))
    integrand = lambda y: (y - 1) * math.exp(R * (y - 1) ** 2) / float(k(y))  # noqa: E731
    return _as_output(_cumulative_quad(integrand, 0.0, xs.ravel()).reshape(xs.shape))


def d2_lower_bound(k: DispersionCoefficient, R: float) -> float:
    """
    Lower bound that d2 must exceed for the interior profile to stay negative.

    The bound is max{(1 - x0)^2 e^(R (1 - x0)^2) / ((2 - M) k(1)),
    x0^2 e^(R x0^2) / ((2 - M) k(0))}.
    """
    _require_regime(k, WeightKind.GAMMA_INTERIOR, Regime.INTERIOR_WEAK, Regime.INTERIOR_STRONG)
    _require_m_below_two(k, "gamma")
    x0 = k.x0
    assert x0 is not None
    m = k.m_const
    right = (1 - x0) ** 2 * math.exp(R * (1 - x0) ** 2) / ((2 - m) * float(k(1.0)))
    left = x0**2 * math.exp(R * x0**2) / ((2 - m) * float(k(0.0)))
    return max(right, left)


def _interior_integral(k: DispersionCoefficient, R: float, xs: FloatArray) -> FloatArray:
    x0 = k.x0
    assert x0 is not None
    if k.is_power_law:
        return _distance_integral(k.alpha, R, np.abs(xs - x0))
    integrand = lambda y: (y - x0) * math.exp(R * (y - x0) ** 2) / float(k(y))  # noqa: E731
    flat = np.atleast_1d(xs).ravel()
    out = np.zeros(flat.shape)
    right = flat >= x0
    out[right] = _cumulative_quad(integrand, x0, flat[right])
    # negative integrand run backwards, so positive on both sides
    out[~right] = _cumulative_quad(integrand, x0, flat[~right])
    return out.reshape(xs.shape)


def resolve_d2(k: DispersionCoefficient, params: CarlemanParams) -> float:
    """
    The offset d2 used by the interior profile.

    Raises:
        ParameterError: If K differs from M or a user d2 does not exceed its bound.
    """
    if params.K is not None and not math.isclose(params.K, k.m_const):
        raise ParameterError("K", params.K, f"the d2 bound is read with K = M = {k.m_const}")
    bound = d2_lower_bound(k, params.R)
    if params.d2 is None:
        return global_settings.D2_SAFETY_FACTOR * bound
    if not params.d2 > bound:
        raise ParameterError("d2", params.d2, f"must exceed {bound:.6g}")
    return params.d2


def gamma_interior(
    k: DispersionCoefficient, params: CarlemanParams, x: npt.ArrayLike
) -> FloatArray:
    """
    Interior profile d1 (integral from x0 to x of (y - x0) e^(R (y - x0)^2) / k(y) - d2).

    Raises:
        ParameterError: If d2 is below its bound.
    """
    _require_regime(k, WeightKind.GAMMA_INTERIOR, Regime.INTERIOR_WEAK, Regime.INTERIOR_STRONG)
    d2 = resolve_d2(k, params)
    xs = np.asarray(x, dtype=np.float64)
    return _as_output(params.d1 * (_interior_integral(k, params.R, xs) - d2))


def psi_nondeg(k: DispersionCoefficient, kappa: float, x: npt.ArrayLike) -> FloatArray:
    """Nondegenerate profile e^(kappa sigma) - e^(2 kappa |sigma|_inf)."""
    sigma_max = float(sigma(k, 0.0))
    return _as_output(np.exp(kappa * sigma(k, x)) - math.exp(2 * kappa * sigma_max))


def phi_nondeg(
    t: npt.ArrayLike,
    a: npt.ArrayLike,
    x: npt.ArrayLike,
    *,
    params: CarlemanParams,
    k: DispersionCoefficient,
    T: float,
    A: float,
) -> tuple[FloatArray, FloatArray]:
    """
    Nondegenerate weights Phi = Theta Psi and phi = Theta e^(kappa sigma).

    Raises:
        SingularityError: If (t, a) is on the singular set of Theta.
    """
    th = theta(t, a, T, A)
    return th * psi_nondeg(k, params.kappa, x), th * np.exp(params.kappa * sigma(k, x))


def varphi(
    t: npt.ArrayLike,
    a: npt.ArrayLike,
    x: npt.ArrayLike,
    *,
    params: CarlemanParams,
    k: DispersionCoefficient,
    T: float,
    A: float,
) -> FloatArray:
    """Boundary weight Theta (p(x) - 2 |p|_inf) for k degenerate at 0."""
    p_max = float(p_weight(k, params.R, 1.0))
    return theta(t, a, T, A) * (p_weight(k, params.R, x) - 2 * p_max)


def varphi_bar(
    t: npt.ArrayLike,
    a: npt.ArrayLike,
    x: npt.ArrayLike,
    *,
    params: CarlemanParams,
    k: DispersionCoefficient,
    T: float,
    A: float,
) -> FloatArray:
    """Boundary weight Theta (pbar(x) - 2 |pbar|_inf) for k degenerate at 1."""
    pbar_max = abs(float(pbar_weight(k, params.R, 1.0)))
    return theta(t, a, T, A) * (pbar_weight(k, params.R, x) - 2 * pbar_max)


def resolve_c_frak(k: DispersionCoefficient, params: CarlemanParams) -> float:
    """
    Offset of the (a2) weight, automatic unless given.

    Raises:
        ParameterError: If a user offset leaves max Psi >= 0.
    """
    peak = math.exp(params.r * float(sigma(k, 0.0)))
    if params.c_frak is None:
        return peak * (1 + global_settings.C_FRAK_MARGIN)
    if not params.c_frak > peak:
        raise ParameterError("c_frak", params.c_frak, f"max Psi < 0 needs c_frak > {peak:.6g}")
    return params.c_frak


def psi_weak_a2(k: DispersionCoefficient, params: CarlemanParams, x: npt.ArrayLike) -> FloatArray:
    """Weak-regularity profile e^(r sigma) - c."""
    return _as_output(np.exp(params.r * sigma(k, x)) - resolve_c_frak(k, params))


def psi_weak_a1(k: DispersionCoefficient, params: CarlemanParams, x: npt.ArrayLike) -> FloatArray:
    """
    Weak-regularity profile for W^{1,1} coefficients with constant g = g0.

    -r (integral from 0 to x of (g0 (1 - t) + h0) / sqrt(k(t))) - c, with c = 1 unless given.
    """
    xs = np.asarray(x, dtype=np.float64)
    g0, h0 = params.g0, params.h0
    integrand = lambda t: (g0 * (1 - t) + h0) / math.sqrt(float(k(t)))  # noqa: E731
    c = 1.0 if params.c_frak is None else params.c_frak
    inner = _cumulative_quad(integrand, 0.0, xs.ravel()).reshape(xs.shape)
    return _as_output(-params.r * inner - c)


def power_ratio_profile(
    k: DispersionCoefficient, exponent: float, x: npt.ArrayLike
) -> FloatArray:
    """Values of |x - z|^exponent / k(x) away from the degeneracy point z."""
    z = k.degeneracy_point
    if z is None:
        raise WeightRegimeError("power_ratio", k.regime)
    xs = np.asarray(x, dtype=np.float64)
    return _as_output(np.abs(xs - z) ** exponent / k(xs))


# %% === Weight fields === #
@dataclass(frozen=True, kw_only=True, eq=False)
class WeightField:
    """
    A weight family evaluated on the space nodes of a lattice.

    The weight is W(t, a, x) = Theta(t, a) * profile(x). The factors of the Carleman
    left-hand side are s Theta g1 v_x^2 and s^3 Theta^3 g3 v^2, and the boundary term is
    s Theta (c0 v_x^2 e^{2sW} at x = 0 + c1 v_x^2 e^{2sW} at x = 1).

    Attributes:
        kind: Weight family.
        params: Carleman constants.
        k: Diffusion coefficient.
        x: Space nodes.
        profile: Spatial profile at the nodes.
        g1: Factor of the gradient term.
        g3: Factor of the zero-order term (already squared).
        boundary_coefficients: Coefficients (c0, c1) of the boundary term.
        source_over_k: Whether the source term is weighted by 1/k.
        notes: Decisions recorded while building the field.
    """

    kind: WeightKind
    params: CarlemanParams
    k: DispersionCoefficient
    x: FloatArray = field(repr=False)
    profile: FloatArray = field(repr=False)
    g1: FloatArray = field(repr=False)
    g3: FloatArray = field(repr=False)
    boundary_coefficients: tuple[float, float]
    source_over_k: bool
    notes: tuple[str, ...] = ()

    @classmethod
    def build(
        cls, kind: WeightKind, params: CarlemanParams, k: DispersionCoefficient, lattice: Lattice
    ) -> WeightField:
        """
        Precompute the profile and the Carleman factors on the lattice nodes.

        Raises:
            WeightRegimeError: If the family does not match the regime of k.
            ParameterError: If an offset violates its bound.
        """
        x = np.asarray(lattice.x)
        kx = k(x)
        ones = np.ones_like(x)
        notes: list[str] = []
        with np.errstate(divide="ignore", invalid="ignore"):
            match kind:
                case WeightKind.PHI_NONDEG:
                    _require_regime(k, kind, Regime.NONDEGENERATE)
                    sig = sigma(k, x)
                    profile = psi_nondeg(k, params.kappa, x)
                    g1 = np.exp(params.kappa * sig)
                    g3 = np.exp(3 * params.kappa * sig)
                    c0 = params.kappa * float(kx[0]) * float(g1[0])
                    c1 = -params.kappa * float(kx[-1]) * float(g1[-1])
                    over_k = False
                case WeightKind.PSI_WEAK_A2:
                    _require_regime(k, kind, Regime.NONDEGENERATE)
                    c_frak = resolve_c_frak(k, params)
                    notes.append(f"c_frak = {c_frak:.12g}")
                    sig_r = np.exp(params.r * sigma(k, x))
                    profile = sig_r - c_frak
                    g1 = sig_r
                    g3 = sig_r**3
                    c0 = params.r * float(kx[0]) * float(sig_r[0])
                    c1 = -params.r * float(kx[-1]) * float(sig_r[-1])
                    over_k = False
                case WeightKind.PSI_WEAK_A1:
                    _require_regime(k, kind, Regime.NONDEGENERATE)
                    notes.append("g is the constant g0")
                    profile = psi_weak_a1(k, params, x)
                    g1, g3 = ones, ones
                    c0 = params.r * math.sqrt(float(kx[0])) * (params.g0 + params.h0)
                    c1 = -params.r * math.sqrt(float(kx[-1])) * params.h0
                    over_k = False
                case WeightKind.VARPHI_BOUNDARY_0:
                    p = p_weight(k, params.R, x)
                    profile = p - 2 * float(p_weight(k, params.R, 1.0))
                    g1 = ones
                    g3 = (x / kx) ** 2
                    c0, c1 = 0.0, 1.0
                    over_k = True
                case WeightKind.VARPHI_BOUNDARY_1:
                    pbar = pbar_weight(k, params.R, x)
                    profile = pbar - 2 * abs(float(pbar_weight(k, params.R, 1.0)))
                    g1 = ones
                    g3 = ((x - 1) / kx) ** 2
                    c0, c1 = 1.0, 0.0
                    over_k = True
                case WeightKind.GAMMA_INTERIOR:
                    d2 = resolve_d2(k, params)
                    notes.append(f"d2 = {d2:.12g}, bound read with K = M = {k.m_const}")
                    profile = gamma_interior(k, params, x)
                    x0 = k.x0
                    assert x0 is not None
                    g1 = ones
                    g3 = ((x - x0) / kx) ** 2
                    c0, c1 = params.d1 * x0, params.d1 * (1 - x0)
                    over_k = True
        g3 = np.where(np.isfinite(g3) & (kx > 0), g3, 0.0)
        return cls(
            kind=kind,
            params=params,
            k=k,
            x=_frozen(x),
            profile=_frozen(profile),
            g1=_frozen(g1),
            g3=_frozen(g3),
            boundary_coefficients=(c0, c1),
            source_over_k=over_k,
            notes=tuple(notes),
        )

    @property
    def s(self) -> float:
        """Carleman parameter."""
        return self.params.s

    def with_s(self, s: float) -> WeightField:
        """Same field with another Carleman parameter."""
        params = attrs.evolve(self.params, s=s)
        return WeightField(
            kind=self.kind,
            params=params,
            k=self.k,
            x=self.x,
            profile=self.profile,
            g1=self.g1,
            g3=self.g3,
            boundary_coefficients=self.boundary_coefficients,
            source_over_k=self.source_over_k,
            notes=self.notes,
        )

    def profile_at(self, x: npt.ArrayLike) -> FloatArray:
        """Spatial profile at arbitrary points of [0, 1]."""
        xs = np.asarray(x, dtype=np.float64)
        match self.kind:
            case WeightKind.PHI_NONDEG:
                return psi_nondeg(self.k, self.params.kappa, xs)
            case WeightKind.PSI_WEAK_A2:
                return psi_weak_a2(self.k, self.params, xs)
            case WeightKind.PSI_WEAK_A1:
                return psi_weak_a1(self.k, self.params, xs)
            case WeightKind.VARPHI_BOUNDARY_0:
                return p_weight(self.k, self.params.R, xs) - 2 * float(
                    p_weight(self.k, self.params.R, 1.0)
                )
            case WeightKind.VARPHI_BOUNDARY_1:
                return pbar_weight(self.k, self.params.R, xs) - 2 * abs(
                    float(pbar_weight(self.k, self.params.R, 1.0))
                )
            case WeightKind.GAMMA_INTERIOR:
                return gamma_interior(self.k, self.params, xs)

    def max_abs_profile(self) -> float:
        """Largest magnitude of the profile on the nodes."""
        return float(np.max(np.abs(self.profile)))


def _frozen(array: npt.ArrayLike) -> FloatArray:
    out = np.array(array, dtype=np.float64)
    out.flags.writeable = False
    return out


def log_weighted_product(
    m: int,
    t: npt.ArrayLike,
    a: npt.ArrayLike,
    x: npt.ArrayLike | None = None,
    *,
    field: WeightField,
    T: float,
    A: float,
    g: npt.ArrayLike | float = 1.0,
) -> FloatArray:
    """
    Theta^m g e^{2 s W} evaluated as exp(m log Theta + log g + 2 s W).

    `t`, `a` and the spatial axis broadcast together; when `x` is None the lattice nodes of
    the field are used and the profile is read from its cache. Exponents below the
    representable range give exactly 0.

    Args:
        m: Power of Theta, one of 0, 1 or 3.
        t: Times strictly inside (0, T).
        a: Ages in (0, A].
        x: Space points, or None for the nodes of the field.
        field: Weight field providing the profile and s.
        T: Final time.
        A: Maximal age.
        g: Nonnegative factor broadcasting with (t, a, x).

    Returns:
        The product, with the broadcast shape of the inputs.
    """
    if m not in {0, 1, 3}:
        msg = f"m must be 0, 1 or 3, got {m}"
        raise ValueError(msg)
    profile = field.profile if x is None else field.profile_at(x)
    log_th = log_theta(t, a, T, A)
    with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
        log_g = np.log(np.asarray(g, dtype=np.float64))
        exponent = m * log_th + log_g + 2 * field.s * np.exp(log_th) * profile
        values = np.exp(exponent)
    return _as_output(np.where(np.isnan(values), 0.0, values))
