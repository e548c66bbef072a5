"""
Application settings for degenpop.

User defaults live in the `[degenpop]` section of `settings.toml` and numeric constants
in the `[degenpop-global]` section. Experiment files are handled by
`degenpop.experiment`.
"""

from __future__ import annotations

from pathlib import Path

import attrs
import typed_settings as ts

from degenpop.__about__ import PROJECT_ROOT, __app_name__

CONFIG_PATH = f"!{PROJECT_ROOT / 'settings.toml'}"  # "!" makes the file mandatory in typed_settings
GLOBAL_CONFIG_SECTION = f"{__app_name__}-global"


def _positive_validator(inst: object, attribute: attrs.Attribute[float], value: float) -> None:
    del inst
    if not value > 0:
        msg = f"{attribute.name} must be positive, got {value}"
        raise ValueError(msg)


def _unit_interval_validator(
    inst: object, attribute: attrs.Attribute[float], value: float
) -> None:
    del inst
    if not 0 < value < 1:
        msg = f"{attribute.name} must lie in (0, 1), got {value}"
        raise ValueError(msg)


@attrs.define(
    kw_only=True,
    frozen=True,
    cache_hash=True,
)
class Settings:
    """
    User settings for degenpop.

    Attributes:
        output_dir: Directory where run directories are created.
        jobs: Maximum number of concurrent runs during a sweep.
        strict_hypotheses: Whether failed structural hypotheses abort a run
            instead of being reported as warnings.
        log_dir: Directory of the rotating log files, relative to the project root
            when not absolute.
    """

    output_dir: Path = Path("runs")
    jobs: int = attrs.field(default=1, validator=attrs.validators.ge(1))
    strict_hypotheses: bool = False
    log_dir: Path = Path("logs")


@attrs.define(
    kw_only=True,
    frozen=True,
    cache_hash=True,
)
class GlobalSettings:
    """
    Global numeric settings for degenpop.

    Global settings are initialized once when loading the module and used
    globally in the package.

    Attributes:
        FIXED_POINT_TOL: Sup-change of the age-0 trace below which the characteristics
            solver stops iterating.
        FIXED_POINT_MAX_ITER: Iteration cap of the characteristics fixed point.
        QUAD_EPSREL: Relative tolerance of adaptive quadratures.
        D2_SAFETY_FACTOR: Factor applied to the lower bound of d2 for its default.
        C_FRAK_MARGIN: Relative margin used by the automatic offset of the weak weight.
        DEFAULT_EPSILON: Default Tikhonov parameter of the control synthesis.
        DEFAULT_CG_TOL: Default relative residual tolerance of conjugate gradient.
        DEFAULT_CG_MAX_ITERS: Default iteration cap of conjugate gradient.
        ENERGY_TOL: Largest relative energy increment accepted by the decay check.
        DUALITY_TOL: Largest relative residual accepted by the duality check.
        REFINEMENT_DRIFT: Largest ratio between effective constants of two lattice levels.
        HARDY_SLACK: Relative slack on the Hardy constant 4.
        HYPOTHESIS_SAMPLES: Number of sample points used to sample custom coefficients.
    """

    # === Fixed points and quadrature === #
    FIXED_POINT_TOL: float = attrs.field(default=1e-10, validator=_positive_validator)
    FIXED_POINT_MAX_ITER: int = attrs.field(default=50, validator=attrs.validators.ge(1))
    QUAD_EPSREL: float = attrs.field(default=1e-10, validator=_positive_validator)

    # === Weights === #
    D2_SAFETY_FACTOR: float = attrs.field(default=1.01, validator=attrs.validators.gt(1.0))
    C_FRAK_MARGIN: float = attrs.field(default=1e-6, validator=_positive_validator)

    # === Control synthesis === #
    DEFAULT_EPSILON: float = attrs.field(default=1e-8, validator=attrs.validators.ge(0.0))
    DEFAULT_CG_TOL: float = attrs.field(default=1e-8, validator=_unit_interval_validator)
    DEFAULT_CG_MAX_ITERS: int = attrs.field(default=300, validator=attrs.validators.ge(1))

    # === Acceptance thresholds === #
    ENERGY_TOL: float = attrs.field(default=1e-12, validator=_positive_validator)
    DUALITY_TOL: float = attrs.field(default=1e-10, validator=_positive_validator)
    REFINEMENT_DRIFT: float = attrs.field(default=2.0, validator=attrs.validators.gt(1.0))
    HARDY_SLACK: float = attrs.field(default=0.05, validator=_positive_validator)

    # === Other === #
    HYPOTHESIS_SAMPLES: int = attrs.field(default=2001, validator=attrs.validators.ge(3))


global_settings = ts.load(
    GlobalSettings,
    appname=__app_name__,
    config_files=[CONFIG_PATH],
    config_file_section=GLOBAL_CONFIG_SECTION,
    env_prefix=None,
)
