"""Main module."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated

import attrs
import frosch  # pyright: ignore[reportMissingTypeStubs]
import typed_settings as ts
from cyclopts import App, Parameter
from dotenv import load_dotenv
from kajihs_utils.loguru import setup_logging
from loguru import logger

from degenpop.__about__ import PROJECT_ROOT, __app_name__, __version__
from degenpop.config import CONFIG_PATH, Settings
from degenpop.environment import EnvironmentVar
from degenpop.experiment import ConfigError, parse_config
from degenpop.runner import Command, ExitCode, RunOptions, run
from degenpop.verify import InequalityFamily

try:
    frosch.hook()  # enable frosch for easier debugging

    loaded_settings = ts.load(
        Settings,
        appname=__app_name__,
        config_files=[CONFIG_PATH],
        env_prefix=None,
    )

    log_dir = loaded_settings.log_dir
    setup_logging(log_dir=log_dir if log_dir.is_absolute() else PROJECT_ROOT / log_dir)

    app = App(version=__version__)
except Exception:
    logger.exception("Exception arose during the app setup")
    raise

ConfigOption = Annotated[Path, Parameter(["--config", "-c"])]
OutOption = Annotated[Path | None, Parameter(["--out", "-o"], env_var=EnvironmentVar.OUT_DIR)]
JobsOption = Annotated[int | None, Parameter(["--jobs", "-j"], env_var=EnvironmentVar.JOBS)]
StrictOption = Annotated[
    bool | None,
    Parameter(["--strict-hypotheses"], env_var=EnvironmentVar.STRICT_HYPOTHESES),
]


def run_options(
    out: Path | None,
    jobs: int | None,
    strict_hypotheses: bool | None,
    settings: Settings = loaded_settings,
) -> RunOptions:
    """Options of the invocation, command line values overriding the settings file."""
    settings = attrs.evolve(
        settings,
        output_dir=settings.output_dir if out is None else out,
        jobs=settings.jobs if jobs is None else jobs,
        strict_hypotheses=(
            settings.strict_hypotheses if strict_hypotheses is None else strict_hypotheses
        ),
    )
    return RunOptions(
        out_dir=settings.output_dir,
        jobs=settings.jobs,
        strict_hypotheses=settings.strict_hypotheses,
    )


def _dispatch(
    command: Command,
    config: Path,
    options: RunOptions,
    family: str | None = None,
) -> int:
    try:
        experiment = parse_config(config)
        selected = None if family is None else InequalityFamily(family)
    except ConfigError as e:
        logger.error(str(e))
        return ExitCode.CONFIGURATION
    except ValueError:
        known = ", ".join(f.value for f in InequalityFamily)
        logger.error(f"Unknown inequality family '{family}', expected one of: {known}")
        return ExitCode.CONFIGURATION
    return int(run(command, experiment, options, family=selected))


@app.command
@logger.catch(reraise=True)  # Should be after @app.command
def solve(
    config: ConfigOption,
    *,
    out: OutOption = None,
    jobs: JobsOption = None,
    strict_hypotheses: StrictOption = None,
) -> int:
    """
    Solve the forward system and export the trajectory.

    Args:
        config: Experiment file (JSON or TOML).
        out: Parent directory of the run directories.
        jobs: Maximum number of concurrent runs.
        strict_hypotheses: Abort when a structural hypothesis fails.
    """
    return _dispatch(Command.SOLVE, config, run_options(out, jobs, strict_hypotheses))


@app.command
@logger.catch(reraise=True)
def control(
    config: ConfigOption,
    *,
    out: OutOption = None,
    jobs: JobsOption = None,
    strict_hypotheses: StrictOption = None,
) -> int:
    """
    Synthesize the null control and export the controlled trajectory.

    Args:
        config: Experiment file (JSON or TOML).
        out: Parent directory of the run directories.
        jobs: Maximum number of concurrent runs.
        strict_hypotheses: Abort when a structural hypothesis fails.
    """
    return _dispatch(Command.CONTROL, config, run_options(out, jobs, strict_hypotheses))


@app.command
@logger.catch(reraise=True)
def verify(
    family: str,
    config: ConfigOption,
    *,
    out: OutOption = None,
    jobs: JobsOption = None,
    strict_hypotheses: StrictOption = None,
) -> int:
    """
    Evaluate one inequality family and write its report.

    Args:
        family: Inequality family, e.g. `hardy`, `duality` or `carleman_boundary0`.
        config: Experiment file (JSON or TOML).
        out: Parent directory of the run directories.
        jobs: Maximum number of concurrent runs.
        strict_hypotheses: Abort when a structural hypothesis fails.
    """
    return _dispatch(
        Command.VERIFY, config, run_options(out, jobs, strict_hypotheses), family=family
    )


@app.command
@logger.catch(reraise=True)
def sweep(
    config: ConfigOption,
    *,
    out: OutOption = None,
    jobs: JobsOption = None,
    strict_hypotheses: StrictOption = None,
) -> int:
    """
    Run the control for every declared grid and Tikhonov parameter.

    Args:
        config: Experiment file (JSON or TOML).
        out: Parent directory of the run directories.
        jobs: Maximum number of concurrent runs.
        strict_hypotheses: Abort when a structural hypothesis fails.
    """
    return _dispatch(Command.SWEEP, config, run_options(out, jobs, strict_hypotheses))


@app.command
@logger.catch(reraise=True)
def selftest(
    config: ConfigOption,
    *,
    out: OutOption = None,
    jobs: JobsOption = None,
    strict_hypotheses: StrictOption = None,
) -> int:
    """
    Run the desk-scale acceptance suite.

    Args:
        config: Experiment file (JSON or TOML); its name and seed are used.
        out: Parent directory of the run directories.
        jobs: Maximum number of concurrent runs.
        strict_hypotheses: Abort when a structural hypothesis fails.
    """
    return _dispatch(Command.SELFTEST, config, run_options(out, jobs, strict_hypotheses))


def main() -> None:
    """Initialize and launch the app."""
    logger.info(f"Application root directory set to {PROJECT_ROOT}")
    load_dotenv(PROJECT_ROOT / ".env")

    sys.exit(app())


if __name__ == "__main__":
    main()
