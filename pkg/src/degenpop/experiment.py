"""
Experiment files: structure, validation and construction of the problem data.

An experiment file is a JSON or TOML document whose blocks mirror `ExperimentConfig`.
Unknown keys are rejected and every problem found in a file is reported at once, each
message ending with the key path it refers to (`"delta must exceed T @ $.problem.delta"`).
"""

from __future__ import annotations

import json
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import attrs
import cattrs
import tomlkit
from loguru import logger
from tomlkit.exceptions import ParseError

from degenpop.config import global_settings
from degenpop.hum import HUMConfig
from degenpop.model import (
    ConfigurationError,
    ControlRegion,
    DispersionCoefficient,
    DomainError,
    Lattice,
    ProblemSetup,
    Rates,
    Regime,
    Scheme,
)
from degenpop.presets import BetaPreset, InitialPreset, MuPreset
from degenpop.weights import CarlemanParams, WeightKind

if TYPE_CHECKING:
    from collections.abc import Sequence


# %% === Exceptions === #
class ConfigError(ConfigurationError):
    """Raised when an experiment file is invalid; holds every problem found."""

    def __init__(self, source: Path | str, errors: Sequence[str]) -> None:
        self.source = source
        self.errors = tuple(errors)
        listing = "\n".join(f"  - {e}" for e in self.errors)
        super().__init__(f"Invalid experiment config {source}:\n{listing}")


class UnsupportedFormatError(ConfigurationError):
    """Raised for experiment files that are neither JSON nor TOML."""

    def __init__(self, path: Path) -> None:
        self.path = path
        msg = f"Unsupported config format '{path.suffix}' for {path}, use .json or .toml"
        super().__init__(msg)


# %% === Blocks === #
@attrs.define(kw_only=True, frozen=True)
class CoefficientBlock:
    """
    Diffusion coefficient.

    Attributes:
        regime: Degeneracy regime.
        alpha: Exponent of the power law of degenerate regimes.
        x0: Interior degeneracy point.
        M: Degeneracy constant, alpha when omitted.
        c0: Constant term of the affine nondegenerate coefficient c0 + c1 x.
        c1: Slope of the affine nondegenerate coefficient.
    """

    regime: Regime = Regime.BOUNDARY_0
    alpha: float = 0.5
    x0: float | None = None
    M: float | None = None
    c0: float = 1.0
    c1: float = 0.0

    def build(self) -> DispersionCoefficient:
        """Coefficient described by the block."""
        if self.regime is Regime.NONDEGENERATE:
            return DispersionCoefficient.from_affine(self.c0, self.c1)
        return DispersionCoefficient(regime=self.regime, alpha=self.alpha, x0=self.x0, M=self.M)


@attrs.define(kw_only=True, frozen=True)
class ProblemBlock:
    """
    Horizons, coefficients, rates and initial datum.

    Attributes:
        T: Final time.
        A: Maximal age.
        abar: Fertility onset.
        delta: Target age margin.
        omega: One or two control intervals.
        coefficient: Diffusion coefficient.
        mu: Death rate preset.
        beta: Fertility preset.
        y0: Initial datum preset.
        scheme: Time discretization of the diffusion step.
    """

    T: float
    A: float
    abar: float
    delta: float
    omega: tuple[tuple[float, float], ...]
    coefficient: CoefficientBlock = CoefficientBlock()
    mu: MuPreset = MuPreset()
    beta: BetaPreset = BetaPreset()
    y0: InitialPreset = InitialPreset()
    scheme: Scheme = Scheme.IMPLICIT_EULER


@attrs.define(kw_only=True, frozen=True)
class LatticeBlock:
    """Lattice sizes; `na` is derived from da = dt when omitted."""

    nx: int = 65
    nt: int = 64
    na: int | None = None


@attrs.define(kw_only=True, frozen=True)
class WeightsBlock:
    """
    Carleman constants.

    Attributes:
        kind: Weight family, the one matching the regime when omitted.
        R: Gaussian exponent of the degenerate profiles.
        kappa: Exponent of the nondegenerate weight.
        r: Exponent of the weak-regularity weights.
        d1: Scale of the interior profile.
        d2: Offset of the interior profile, from its lower bound when omitted.
        c_frak: Offset of the weak-regularity weights, automatic when omitted.
        g0: Constant g of the (a1) weight.
        h0: Constant h0 of the (a1) weight.
        s: Explicit values of s; empty selects the scaled defaults.
    """

    kind: WeightKind | None = None
    R: float = 1.0
    kappa: float = 1.0
    r: float = 1.0
    d1: float = 1.0
    d2: float | None = None
    c_frak: float | None = None
    g0: float = 1.0
    h0: float = 1.0
    s: tuple[float, ...] = ()

    def params(self, s: float = 1.0) -> CarlemanParams:
        """Carleman constants for one value of s."""
        return CarlemanParams(
            s=s,
            R=self.R,
            kappa=self.kappa,
            r=self.r,
            d1=self.d1,
            d2=self.d2,
            c_frak=self.c_frak,
            g0=self.g0,
            h0=self.h0,
        )


@attrs.define(kw_only=True, frozen=True)
class HumBlock:
    """
    Control synthesis.

    Attributes:
        epsilon: Tikhonov parameter.
        cg_tol: Relative residual at which conjugate gradient stops.
        cg_max_iters: Iteration cap of conjugate gradient.
        two_phase: Whether the control vanishes on [0, T_tilde].
        T_tilde: Start of the control window, T - abar when omitted.
    """

    epsilon: float = global_settings.DEFAULT_EPSILON
    cg_tol: float = global_settings.DEFAULT_CG_TOL
    cg_max_iters: int = global_settings.DEFAULT_CG_MAX_ITERS
    two_phase: bool = False
    T_tilde: float | None = None

    def config(self, epsilon: float | None = None) -> HUMConfig:
        """Synthesis parameters, optionally with another Tikhonov parameter."""
        return HUMConfig(
            epsilon=self.epsilon if epsilon is None else epsilon,
            cg_tol=self.cg_tol,
            cg_max_iters=self.cg_max_iters,
        )


@attrs.define(kw_only=True, frozen=True)
class VerifyBlock:
    """
    Sizes of the inequality checks.

    Attributes:
        ensemble_size: Number of terminal data of the observability check.
        young_data: Whether observability data also live on (0, delta).
        duality_trials: Number of random triples of the duality check.
        hardy_family_size: Number of exponents of the Hardy test family.
        omega_inner: Subregion of the Caccioppoli check, the middle half of each
            interval of omega when omitted.
        refine: Whether Carleman and observability checks are repeated on the lattice
            with twice as many space cells and compared.
    """

    ensemble_size: int = 32
    young_data: bool = False
    duality_trials: int = 20
    hardy_family_size: int = 10
    omega_inner: tuple[tuple[float, float], ...] | None = None
    refine: bool = False


@attrs.define(kw_only=True, frozen=True)
class SweepBlock:
    """Lists crossed by the `sweep` command; empty lists fall back to the single values."""

    grids: tuple[LatticeBlock, ...] = ()
    epsilon: tuple[float, ...] = ()


class OutputFormat(StrEnum):
    """Artifact formats."""

    CSV = "csv"
    SLAB = "slab"


@attrs.define(kw_only=True, frozen=True)
class OutputBlock:
    """Run directory and formats of trajectory artifacts."""

    directory: Path | None = None
    formats: tuple[OutputFormat, ...] = (OutputFormat.CSV, OutputFormat.SLAB)


@attrs.define(kw_only=True, frozen=True)
class ExperimentConfig:
    """
    Complete description of an experiment.

    Attributes:
        name: Name of the experiment, used for run directories.
        problem: Problem data.
        lattice: Lattice sizes.
        weights: Carleman constants.
        hum: Control synthesis.
        verify: Inequality check sizes.
        sweep: Lists of the sweep command.
        output: Artifact options.
        seed: Seed of every random ensemble.
    """

    name: str = "experiment"
    problem: ProblemBlock
    lattice: LatticeBlock = LatticeBlock()
    weights: WeightsBlock = WeightsBlock()
    hum: HumBlock = HumBlock()
    verify: VerifyBlock = VerifyBlock()
    sweep: SweepBlock = SweepBlock()
    output: OutputBlock = OutputBlock()
    seed: int = 0

    def build_problem(
        self, lattice: LatticeBlock | None = None, *, strict: bool = False
    ) -> ProblemSetup:
        """
        Problem data on the configured lattice or on another one.

        Raises:
            ConfigurationError: If the data are inconsistent with the lattice.
        """
        sizes = self.lattice if lattice is None else lattice
        p = self.problem
        grid = Lattice.build(T=p.T, A=p.A, nx=sizes.nx, nt=sizes.nt, na=sizes.na)
        rates = Rates(
            mu=p.mu.build(),
            beta=p.beta.build(p.abar, p.A),
            abar=p.abar,
            label=f"{p.mu.describe()}, {p.beta.describe()}",
        )
        return ProblemSetup(
            T=p.T,
            A=p.A,
            rates=rates,
            k=p.coefficient.build(),
            delta=p.delta,
            omega=ControlRegion.of(*p.omega),
            lattice=grid,
            y0=p.y0.build(grid),
            scheme=p.scheme,
            strict=strict,
        )

    def refined_lattice(self) -> LatticeBlock:
        """Lattice with twice as many space cells."""
        return attrs.evolve(self.lattice, nx=2 * (self.lattice.nx - 1) + 1)

    def to_dict(self) -> dict[str, Any]:
        """Plain form of the config, used as the manifest echo."""
        return converter.unstructure(self)


# %% === Parsing === #
converter = cattrs.Converter(forbid_extra_keys=True)
converter.register_structure_hook(Path, lambda value, _: Path(value))
converter.register_unstructure_hook(Path, lambda path: path.as_posix())


def load_document(path: Path) -> dict[str, Any]:
    """
    Read a JSON or TOML experiment file into plain Python values.

    Raises:
        UnsupportedFormatError: If the suffix is neither .json nor .toml.
        ConfigError: If the file cannot be read or parsed.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(path, [f"cannot read file: {e.strerror}"]) from e
    match path.suffix.lower():
        case ".json":
            try:
                document = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigError(path, [f"invalid JSON at line {e.lineno}: {e.msg}"]) from e
        case ".toml":
            try:
                document = tomlkit.parse(text).unwrap()
            except ParseError as e:
                raise ConfigError(path, [f"invalid TOML: {e}"]) from e
        case _:
            raise UnsupportedFormatError(path)
    if not isinstance(document, dict):
        raise ConfigError(path, ["top level must be a table @ $"])
    return document


def structure_config(document: dict[str, Any], source: Path | str = "<memory>") -> ExperimentConfig:
    """
    Structure and validate a parsed document.

    Raises:
        ConfigError: With every structural and cross-field problem found.
    """
    try:
        config = converter.structure(document, ExperimentConfig)
    except cattrs.BaseValidationError as e:
        raise ConfigError(source, cattrs.transform_error(e, path="$")) from e
    except (ValueError, TypeError) as e:
        raise ConfigError(source, [f"{e} @ $"]) from e

    errors = cross_field_errors(config)
    if not errors:
        try:
            config.build_problem()
        except (ConfigurationError, DomainError) as e:
            errors.append(f"{e} @ $.problem")
    if errors:
        raise ConfigError(source, errors)
    return config


def parse_config(path: Path) -> ExperimentConfig:
    """
    Read, structure and validate an experiment file.

    Raises:
        ConfigError: With every problem found, each tagged with its key path.
        UnsupportedFormatError: If the suffix is neither .json nor .toml.
    """
    config = structure_config(load_document(path), path)
    logger.info(f"Loaded experiment '{config.name}' from {path}")
    return config


def _interval_errors(intervals: tuple[tuple[float, float], ...], where: str) -> list[str]:
    errors = []
    if len(intervals) not in {1, 2}:
        errors.append(f"expected one or two intervals, got {len(intervals)} @ {where}")
    for i, (lo, hi) in enumerate(intervals):
        if not 0 < lo < hi < 1:
            errors.append(f"interval ({lo}, {hi}) must satisfy 0 < lo < hi < 1 @ {where}[{i}]")
    if len(intervals) == 2 and not intervals[0][1] < intervals[1][0]:
        errors.append(f"intervals must be sorted and disjoint @ {where}")
    return errors


def _lattice_errors(block: LatticeBlock, where: str) -> list[str]:
    errors = []
    if block.nx < 3:
        errors.append(f"nx must be at least 3 @ {where}.nx")
    if block.nt < 1:
        errors.append(f"nt must be at least 1 @ {where}.nt")
    return errors


def cross_field_errors(config: ExperimentConfig) -> list[str]:
    """Constraints spanning several keys, as messages tagged with their key paths."""
    p = config.problem
    errors: list[str] = []
    if not p.T > 0:
        errors.append("T must be positive @ $.problem.T")
    if not p.A > p.T:
        errors.append("A must exceed T @ $.problem.A")
    if not p.delta > p.T:
        errors.append("delta must exceed T @ $.problem.delta")
    elif not p.delta < p.A:
        errors.append("delta must be smaller than A @ $.problem.delta")
    if not p.abar > 0:
        errors.append("abar must be positive @ $.problem.abar")
    elif p.abar > p.T:
        errors.append("abar must not exceed T @ $.problem.abar")
    errors += _interval_errors(p.omega, "$.problem.omega")

    c = p.coefficient
    if c.regime.is_interior:
        if c.x0 is None:
            errors.append(f"regime {c.regime} needs x0 @ $.problem.coefficient.x0")
        elif not errors and not _x0_is_observed(p.omega, c.x0):
            errors.append(
                "x0 must lie in omega or between its two intervals @ $.problem.coefficient.x0"
            )
    elif c.x0 is not None:
        errors.append("x0 is only meaningful for interior regimes @ $.problem.coefficient.x0")

    errors += _lattice_errors(config.lattice, "$.lattice")
    for i, grid in enumerate(config.sweep.grids):
        errors += _lattice_errors(grid, f"$.sweep.grids[{i}]")

    h = config.hum
    if not h.epsilon >= 0:
        errors.append("epsilon must be nonnegative @ $.hum.epsilon")
    for i, eps in enumerate(config.sweep.epsilon):
        if not eps >= 0:
            errors.append(f"epsilon must be nonnegative @ $.sweep.epsilon[{i}]")
    if not 0 < h.cg_tol < 1:
        errors.append("cg_tol must lie in (0, 1) @ $.hum.cg_tol")
    if h.cg_max_iters < 1:
        errors.append("cg_max_iters must be at least 1 @ $.hum.cg_max_iters")
    if h.T_tilde is not None and not 0 <= h.T_tilde < p.T:
        errors.append("T_tilde must lie in [0, T) @ $.hum.T_tilde")

    for i, s in enumerate(config.weights.s):
        if not s > 0:
            errors.append(f"s must be positive @ $.weights.s[{i}]")

    v = config.verify
    if v.ensemble_size < 1:
        errors.append("ensemble_size must be at least 1 @ $.verify.ensemble_size")
    if v.duality_trials < 1:
        errors.append("duality_trials must be at least 1 @ $.verify.duality_trials")
    if v.hardy_family_size < 2:
        errors.append("hardy_family_size must be at least 2 @ $.verify.hardy_family_size")
    if v.omega_inner is not None:
        errors += _interval_errors(v.omega_inner, "$.verify.omega_inner")
    return errors


def _x0_is_observed(omega: tuple[tuple[float, float], ...], x0: float) -> bool:
    region = ControlRegion.of(*omega)
    return region.contains(x0) or region.straddles(x0)


def default_omega_inner(omega: ControlRegion) -> ControlRegion:
    """Middle half of each interval of omega."""
    return ControlRegion.of(
        *((lo + (hi - lo) / 4, hi - (hi - lo) / 4) for lo, hi in omega.intervals)
    )
