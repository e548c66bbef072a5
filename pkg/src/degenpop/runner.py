"""
Execution of experiment commands.

Every command writes into its own run directory and ends with a manifest listing the
artifacts with their digests. `run` maps the outcome to the exit code of the command line:
0 on success, 2 for invalid inputs, 3 for numerical failures and 4 when a check ran but
missed its criterion.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from enum import IntEnum, StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import attrs
import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from degenpop.config import global_settings
from degenpop.experiment import OutputFormat, default_omega_inner
from degenpop.export import RunDirectory, trajectory_table
from degenpop.hum import (
    HUMConfig,
    gradient_defect,
    gramian_defects,
    synthesize_control,
    two_phase_control,
    verify_null,
)
from degenpop.model import (
    ConfigurationError,
    ControlRegion,
    DataError,
    DispersionCoefficient,
    DomainError,
    HypothesisError,
    NumericalError,
    Regime,
    state_norm,
)
from degenpop.pde import energy_profile, solve_forward
from degenpop.presets import Scenario, random_smooth_field, reference_problem
from degenpop.verify import (
    InequalityFamily,
    adjoint_agreement,
    check_caccioppoli,
    check_carleman_global,
    check_carleman_local,
    check_duality,
    check_energy_decay,
    check_hardy,
    check_observability,
    drift_ok,
    refinement_drift,
    render_report,
    spatial_order,
    temporal_order,
)
from degenpop.weights import WeightKind

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from degenpop.experiment import ExperimentConfig, LatticeBlock
    from degenpop.hum import ControlResult
    from degenpop.model import ProblemSetup
    from degenpop.pde import Trajectory
    from degenpop.verify import ConvergenceStudy, InequalityReport

CONTROL_RESIDUAL_FACTOR = 1e-2
GRAMIAN_TOL = 1e-12
GRADIENT_TOL = 1e-6
GRADIENT_STEP = 1e-4


class Command(StrEnum):
    """Commands of the command line."""

    SOLVE = "solve"
    CONTROL = "control"
    VERIFY = "verify"
    SWEEP = "sweep"
    SELFTEST = "selftest"


class ExitCode(IntEnum):
    """Exit status of a command."""

    SUCCESS = 0
    CONFIGURATION = 2
    NUMERICAL = 3
    ACCEPTANCE = 4


class AcceptanceError(Exception):
    """Raised when a run completed but at least one check missed its criterion."""

    def __init__(self, failures: Sequence[str]) -> None:
        self.failures = tuple(failures)
        super().__init__(f"{len(self.failures)} check(s) failed: {', '.join(self.failures)}")


class MissingFamilyError(ConfigurationError):
    """Raised when `verify` is called without an inequality family."""

    def __init__(self) -> None:
        families = ", ".join(f.value for f in InequalityFamily)
        super().__init__(f"verify needs an inequality family, one of: {families}")


def exit_code_for(error: BaseException) -> ExitCode:
    """Exit code matching an exception raised by a command."""
    match error:
        case AcceptanceError():
            return ExitCode.ACCEPTANCE
        case NumericalError():
            return ExitCode.NUMERICAL
        case ConfigurationError() | DomainError() | DataError() | HypothesisError():
            return ExitCode.CONFIGURATION
        case _:
            raise error


@attrs.define(kw_only=True, frozen=True)
class RunOptions:
    """
    Options of one invocation, independent of the experiment file.

    Attributes:
        out_dir: Parent of the run directories, unless the experiment sets one.
        jobs: Maximum number of concurrent sweep points.
        strict_hypotheses: Whether failed hypotheses abort the run.
        progress: Whether progress bars are shown.
    """

    out_dir: Path = Path("runs")
    jobs: int = attrs.field(default=1, validator=attrs.validators.ge(1))
    strict_hypotheses: bool = False
    progress: bool = True


# %% === Entry points === #
def run(
    command: Command,
    config: ExperimentConfig,
    options: RunOptions | None = None,
    *,
    family: InequalityFamily | None = None,
) -> ExitCode:
    """
    Run a command and return its exit code.

    Errors of the expected categories are logged and turned into exit codes; any other
    exception propagates.
    """
    opts = RunOptions() if options is None else options
    try:
        run_dir = execute(command, config, opts, family=family)
    except (
        AcceptanceError,
        NumericalError,
        ConfigurationError,
        DomainError,
        DataError,
        HypothesisError,
    ) as e:
        code = exit_code_for(e)
        logger.error(f"{command} failed with exit code {int(code)}: {e}")
        return code
    logger.success(f"{command} completed, artifacts in {run_dir.root}")
    return ExitCode.SUCCESS


def run_directory(
    command: Command,
    config: ExperimentConfig,
    options: RunOptions,
    family: InequalityFamily | None = None,
) -> RunDirectory:
    """Run directory `<out>/<experiment>-<command>[-<family>]`."""
    base = config.output.directory or options.out_dir
    name = f"{config.name}-{command}" + (f"-{family}" if family is not None else "")
    return RunDirectory(base / name)


def execute(
    command: Command,
    config: ExperimentConfig,
    options: RunOptions,
    *,
    family: InequalityFamily | None = None,
) -> RunDirectory:
    """
    Run a command, write its manifest and timing, and return its run directory.

    Raises:
        AcceptanceError: After the manifest is written, if a check failed.
    """
    started = time.perf_counter()
    if command is Command.VERIFY and family is None:
        raise MissingFamilyError
    run_dir = run_directory(command, config, options, family)
    logger.info(f"Running {command} for '{config.name}' in {run_dir.root}")
    handler = _HANDLERS[command]
    failures = handler(config, run_dir, options, family)
    echo = {
        "experiment": config.to_dict(),
        "family": family,
        "strict_hypotheses": options.strict_hypotheses,
    }
    run_dir.write_manifest(str(command), echo, config.seed)
    run_dir.write_timing(time.perf_counter() - started)
    if failures:
        raise AcceptanceError(failures)
    return run_dir


# %% === Writers === #
def _write_trajectory(
    run_dir: RunDirectory, name: str, trajectory: Trajectory, formats: Sequence[OutputFormat]
) -> None:
    if OutputFormat.SLAB in formats:
        run_dir.trajectory(name, trajectory, csv=OutputFormat.CSV in formats)
    elif OutputFormat.CSV in formats:
        run_dir.table(f"{name}.csv", trajectory_table(trajectory))


def _write_report(run_dir: RunDirectory, name: str, report: InequalityReport) -> None:
    run_dir.json(f"{name}.json", report.to_dict())
    run_dir.table(f"{name}.csv", report.table())
    run_dir.text(f"{name}.txt", render_report(report))


def _write_study(run_dir: RunDirectory, study: ConvergenceStudy) -> None:
    run_dir.json(f"{study.name}.json", study.to_dict())
    run_dir.table(f"{study.name}.csv", study.table())


def _write_control(
    run_dir: RunDirectory,
    problem: ProblemSetup,
    result: ControlResult,
    formats: Sequence[OutputFormat],
    prefix: str = "",
) -> bool:
    threshold = CONTROL_RESIDUAL_FACTOR * result.initial_norm
    passed = result.terminal_residual <= threshold
    run_dir.json(
        f"{prefix}control.json",
        {
            **result.summary(),
            "lattice": problem.lattice.tag,
            "verify_null": verify_null(result.state, problem),
            "residual_threshold": threshold,
            "phase_one_norm": result.state.metadata.get("phase_one_norm"),
            "pass": passed,
        },
    )
    run_dir.table(
        f"{prefix}cg_history.csv",
        pd.DataFrame({
            "iteration": np.arange(len(result.j_history)),
            "J": result.j_history,
            "relative_residual": result.residual_history,
        }),
    )
    _write_trajectory(run_dir, f"{prefix}state", result.state, formats)
    if OutputFormat.SLAB in formats:
        lattice = problem.lattice
        run_dir.slab(
            f"{prefix}control",
            result.control,
            {"t": lattice.t, "a": lattice.a, "x": lattice.x},
            {"kind": "control", "lattice": lattice.tag},
        )
    return passed


# %% === Commands === #
type Handler = Callable[
    [ExperimentConfig, RunDirectory, RunOptions, InequalityFamily | None], list[str]
]


def _solve(
    config: ExperimentConfig,
    run_dir: RunDirectory,
    options: RunOptions,
    family: InequalityFamily | None,
) -> list[str]:
    del family
    problem = config.build_problem(strict=options.strict_hypotheses)
    run_dir.json("hypotheses.json", problem.hypotheses.to_dict())
    trajectory = solve_forward(problem)
    _write_trajectory(run_dir, "state", trajectory, config.output.formats)
    energy = energy_profile(trajectory, problem)
    run_dir.table("energy.csv", pd.DataFrame({"t": trajectory.times, "energy": energy}))
    run_dir.json(
        "solve.json",
        {
            "lattice": problem.lattice.tag,
            "rates": problem.rates.label,
            "initial_norm": state_norm(trajectory.initial, problem),
            "final_norm": state_norm(trajectory.final, problem),
        },
    )
    return []


def synthesize(
    problem: ProblemSetup, config: ExperimentConfig, epsilon: float | None = None, *, progress: bool
) -> ControlResult:
    """Control of the experiment: two-phase or from T_tilde (0 when omitted)."""
    hum = config.hum
    settings = hum.config(epsilon)
    if hum.two_phase:
        return two_phase_control(problem, None, hum.T_tilde, settings, progress=progress)
    t_start = 0.0 if hum.T_tilde is None else hum.T_tilde
    return synthesize_control(problem, None, settings, t_start=t_start, progress=progress)


def _control(
    config: ExperimentConfig,
    run_dir: RunDirectory,
    options: RunOptions,
    family: InequalityFamily | None,
) -> list[str]:
    del family
    problem = config.build_problem(strict=options.strict_hypotheses)
    run_dir.json("hypotheses.json", problem.hypotheses.to_dict())
    result = synthesize(problem, config, progress=options.progress)
    passed = _write_control(run_dir, problem, result, config.output.formats)
    return [] if passed else ["control residual"]


_REFINABLE = frozenset({
    InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_0,
    InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_1,
    InequalityFamily.CARLEMAN_GLOBAL_INTERIOR,
    InequalityFamily.CARLEMAN_NONDEG,
    InequalityFamily.CARLEMAN_LOCAL,
    InequalityFamily.OBSERVABILITY,
})

_FAMILY_WEIGHTS = {
    InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_0: WeightKind.VARPHI_BOUNDARY_0,
    InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_1: WeightKind.VARPHI_BOUNDARY_1,
    InequalityFamily.CARLEMAN_GLOBAL_INTERIOR: WeightKind.GAMMA_INTERIOR,
    InequalityFamily.CARLEMAN_NONDEG: WeightKind.PHI_NONDEG,
}


def check_family(
    family: InequalityFamily, config: ExperimentConfig, problem: ProblemSetup
) -> InequalityReport:
    """Run one inequality check with the sizes and constants of the experiment."""
    weights = config.weights
    verify = config.verify
    s_values = weights.s or None
    match family:
        case InequalityFamily.CARLEMAN_NONDEG if weights.kind is not None:
            return check_carleman_global(
                weights.kind, problem, s_values=s_values, params=weights.params()
            )
        case (
            InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_0
            | InequalityFamily.CARLEMAN_GLOBAL_BOUNDARY_1
            | InequalityFamily.CARLEMAN_GLOBAL_INTERIOR
            | InequalityFamily.CARLEMAN_NONDEG
        ):
            return check_carleman_global(
                _FAMILY_WEIGHTS[family], problem, s_values=s_values, params=weights.params()
            )
        case InequalityFamily.CARLEMAN_LOCAL:
            return check_carleman_local(
                weights.kind, problem, s_values=s_values, params=weights.params()
            )
        case InequalityFamily.OBSERVABILITY:
            return check_observability(
                problem, verify.ensemble_size, seed=config.seed, young_data=verify.young_data
            )
        case InequalityFamily.CACCIOPPOLI:
            inner = (
                default_omega_inner(problem.omega)
                if verify.omega_inner is None
                else ControlRegion.of(*verify.omega_inner)
            )
            return check_caccioppoli(problem, inner, s_values=s_values, params=weights.params())
        case InequalityFamily.HARDY_POINCARE:
            return check_hardy(problem.k, verify.hardy_family_size)
        case InequalityFamily.ENERGY_DECAY:
            return check_energy_decay(problem)
        case InequalityFamily.DUALITY:
            return check_duality(problem, verify.duality_trials, seed=config.seed)


def _verify(
    config: ExperimentConfig,
    run_dir: RunDirectory,
    options: RunOptions,
    family: InequalityFamily | None,
) -> list[str]:
    assert family is not None
    problem = config.build_problem(strict=options.strict_hypotheses)
    report = check_family(family, config, problem)
    _write_report(run_dir, str(family), report)
    failures = [] if report.passed else [str(family)]
    if config.verify.refine and family in _REFINABLE:
        fine_problem = config.build_problem(
            config.refined_lattice(), strict=options.strict_hypotheses
        )
        fine = check_family(family, config, fine_problem)
        _write_report(run_dir, f"{family}-{fine_problem.lattice.tag}", fine)
        stable = drift_ok(report, fine)
        run_dir.json(
            "refinement.json",
            {
                "coarse": problem.lattice.tag,
                "fine": fine_problem.lattice.tag,
                "drift": refinement_drift(report, fine),
                "limit": global_settings.REFINEMENT_DRIFT,
                "pass": stable,
            },
        )
        if not fine.passed:
            failures.append(f"{family} on {fine_problem.lattice.tag}")
        if not stable:
            failures.append(f"{family} refinement drift")
    return failures


# %% === Sweep === #
@dataclass(frozen=True, kw_only=True)
class SweepPoint:
    """
    One control run of a sweep.

    Attributes:
        index: Position of the point in the sweep.
        lattice: Lattice sizes.
        epsilon: Tikhonov parameter.
    """

    index: int
    lattice: LatticeBlock
    epsilon: float

    @property
    def slug(self) -> str:
        """Name of the point directory."""
        return f"point-{self.index:03d}"


def sweep_points(config: ExperimentConfig) -> list[SweepPoint]:
    """Cartesian product of the declared grids and Tikhonov parameters."""
    grids = config.sweep.grids or (config.lattice,)
    epsilons = config.sweep.epsilon or (config.hum.epsilon,)
    return [
        SweepPoint(index=i, lattice=grid, epsilon=eps)
        for i, (grid, eps) in enumerate((g, e) for g in grids for e in epsilons)
    ]


def run_sweep_point(
    point: SweepPoint, config: ExperimentConfig, root: Path, *, strict: bool
) -> tuple[dict[str, Any], list[Path]]:
    """Control run of one sweep point in its own directory; returns its row and artifacts."""
    problem = config.build_problem(point.lattice, strict=strict)
    result = synthesize(problem, config, point.epsilon, progress=False)
    point_dir = RunDirectory(root / point.slug)
    passed = _write_control(point_dir, problem, result, config.output.formats)
    row = {
        "point": point.index,
        "lattice": problem.lattice.tag,
        "epsilon": point.epsilon,
        "terminal_residual": result.terminal_residual,
        "control_norm": result.control_norm,
        "ratio": result.ratio,
        "cg_iters": result.cg_iters,
        "converged": result.converged,
        "residual_pass": passed,
    }
    return row, list(point_dir.artifacts)


def _carleman_on_grid(
    config: ExperimentConfig, grid: LatticeBlock, *, strict: bool
) -> InequalityReport:
    problem = config.build_problem(grid, strict=strict)
    weights = config.weights
    return check_carleman_global(
        weights.kind or _FAMILY_WEIGHTS_BY_REGIME[problem.k.regime],
        problem,
        s_values=weights.s or None,
        params=weights.params(),
    )


_FAMILY_WEIGHTS_BY_REGIME = {
    Regime.BOUNDARY_0: WeightKind.VARPHI_BOUNDARY_0,
    Regime.BOUNDARY_1: WeightKind.VARPHI_BOUNDARY_1,
    Regime.INTERIOR_WEAK: WeightKind.GAMMA_INTERIOR,
    Regime.INTERIOR_STRONG: WeightKind.GAMMA_INTERIOR,
    Regime.NONDEGENERATE: WeightKind.PHI_NONDEG,
}


def _sweep(
    config: ExperimentConfig,
    run_dir: RunDirectory,
    options: RunOptions,
    family: InequalityFamily | None,
) -> list[str]:
    del family
    points = sweep_points(config)
    worker = functools.partial(
        run_sweep_point, config=config, root=run_dir.root, strict=options.strict_hypotheses
    )
    rows: dict[int, dict[str, Any]] = {}
    bar = tqdm(total=len(points), desc="sweep", unit="point", disable=not options.progress)
    if options.jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(options.jobs, len(points))) as executor:
            futures = {executor.submit(worker, point): point for point in points}
            for future in as_completed(futures):
                row, artifacts = future.result()
                rows[row["point"]] = row
                run_dir.register(*artifacts)
                bar.update()
    else:
        for point in points:
            row, artifacts = worker(point)
            rows[point.index] = row
            run_dir.register(*artifacts)
            bar.update()
    bar.close()
    run_dir.table("sweep.csv", pd.DataFrame([rows[i] for i in sorted(rows)]))

    failures = []
    grids = config.sweep.grids or (config.lattice,)
    reports = [_carleman_on_grid(config, grid, strict=options.strict_hypotheses) for grid in grids]
    for report in reports:
        _write_report(run_dir, f"carleman-{report.grid_tag}", report)
        if not report.passed:
            failures.append(f"carleman on {report.grid_tag}")
    drifts = [refinement_drift(a, b) for a, b in itertools.pairwise(reports)]
    run_dir.table(
        "carleman.csv",
        pd.DataFrame({
            "lattice": [r.grid_tag for r in reports],
            "effective_constant": [r.effective_constant for r in reports],
            "drift_from_previous": [np.nan, *drifts],
            "pass": [r.passed for r in reports],
        }),
    )
    return failures


# %% === Selftest === #
type Check = Callable[[ProblemSetup], InequalityReport]
type Builder = Callable[[int, int], ProblemSetup]


@dataclass(frozen=True, kw_only=True)
class Outcome:
    """Result of one acceptance check of the selftest."""

    name: str
    passed: bool
    value: float
    threshold: float
    criterion: str


def _reference(scenario: Scenario, nx: int, nt: int) -> ProblemSetup:
    return reference_problem(scenario, nx=nx, nt=nt)


def _boundary_one(nx: int, nt: int) -> ProblemSetup:
    problem = _reference(Scenario.BOUNDARY, nx, nt)
    k = DispersionCoefficient.power_law(Regime.BOUNDARY_1, 0.5)
    return dataclasses.replace(problem, k=k, y0=problem.initial_state)


def _acceptance_duality(run_dir: RunDirectory, seed: int) -> list[Outcome]:
    report = check_duality(_reference(Scenario.BOUNDARY, 17, 16), 20, seed=seed)
    _write_report(run_dir, "duality", report)
    return [
        Outcome(
            name="duality",
            passed=report.passed,
            value=report.effective_constant,
            threshold=global_settings.DUALITY_TOL,
            criterion="relative duality residual",
        )
    ]


def _acceptance_control(run_dir: RunDirectory, progress: bool) -> list[Outcome]:
    outcomes = []
    settings = HUMConfig(epsilon=1e-8)
    for scenario in (Scenario.BOUNDARY, Scenario.INTERIOR):
        problem = _reference(scenario, 65, 32)
        result = synthesize_control(problem, None, settings, progress=progress)
        passed = _write_control(run_dir, problem, result, (), prefix=f"{scenario}-")
        outcomes.append(
            Outcome(
                name=f"control_{scenario}",
                passed=passed and result.cg_iters <= settings.cg_max_iters,
                value=result.terminal_residual / result.initial_norm,
                threshold=CONTROL_RESIDUAL_FACTOR,
                criterion="terminal residual / |y0|",
            )
        )
    problem = _reference(Scenario.BOUNDARY, 65, 32)
    result = two_phase_control(problem, None, None, settings, progress=progress)
    passed = _write_control(run_dir, problem, result, (), prefix="two_phase-")
    outcomes.append(
        Outcome(
            name="control_two_phase",
            passed=passed and result.state.metadata["phase_one_norm"] <= result.initial_norm,
            value=result.terminal_residual / result.initial_norm,
            threshold=CONTROL_RESIDUAL_FACTOR,
            criterion="terminal residual / |y0| with |u(T_tilde)| <= |y0|",
        )
    )
    return outcomes


def _acceptance_gramian(run_dir: RunDirectory, seed: int) -> list[Outcome]:
    problem = _reference(Scenario.BOUNDARY, 17, 16)
    defects = gramian_defects(problem, seed=seed)
    gradient = gradient_defect(problem, step=GRADIENT_STEP, seed=seed)
    run_dir.json("gramian.json", {**defects, "gradient": gradient})
    return [
        Outcome(
            name=f"gramian_{name}",
            passed=value <= GRAMIAN_TOL,
            value=value,
            threshold=GRAMIAN_TOL,
            criterion=f"relative {name} defect",
        )
        for name, value in defects.items()
    ] + [
        Outcome(
            name="gradient",
            passed=gradient <= GRADIENT_TOL,
            value=gradient,
            threshold=GRADIENT_TOL,
            criterion=f"central difference at step {GRADIENT_STEP:g}",
        )
    ]


def _acceptance_hardy(run_dir: RunDirectory) -> list[Outcome]:
    report = check_hardy()
    _write_report(run_dir, "hardy", report)
    return [
        Outcome(
            name="hardy",
            passed=report.passed,
            value=report.effective_constant,
            threshold=4.0 * (1 + global_settings.HARDY_SLACK),
            criterion=report.criterion,
        )
    ]


def _acceptance_energy(run_dir: RunDirectory, seed: int, runs: int = 10) -> list[Outcome]:
    problem = _reference(Scenario.BOUNDARY, 33, 32)
    rng = np.random.default_rng(seed)
    increments = []
    for _ in range(runs):
        y0 = random_smooth_field(rng, problem.lattice, problem.active)
        report = check_energy_decay(problem, y0)
        increments.append(float(report.details["max_increment"]))
    worst = max(increments)
    table = pd.DataFrame({"run": range(runs), "max_increment": increments})
    run_dir.table("energy_decay.csv", table)
    return [
        Outcome(
            name="energy_decay",
            passed=worst <= global_settings.ENERGY_TOL,
            value=worst,
            threshold=global_settings.ENERGY_TOL,
            criterion="largest relative energy increment",
        )
    ]


def _refinement_outcome(run_dir: RunDirectory, name: str, check: Check, build: Builder) -> Outcome:
    coarse = check(build(33, 32))
    fine = check(build(65, 32))
    _write_report(run_dir, f"{name}-{coarse.grid_tag}", coarse)
    _write_report(run_dir, f"{name}-{fine.grid_tag}", fine)
    drift = refinement_drift(coarse, fine)
    return Outcome(
        name=name,
        passed=coarse.passed and fine.passed and drift_ok(coarse, fine),
        value=drift,
        threshold=global_settings.REFINEMENT_DRIFT,
        criterion="finite constants and drift between 33 and 65 space nodes",
    )


def _acceptance_carleman(run_dir: RunDirectory) -> list[Outcome]:
    cases: list[tuple[str, Check, Builder]] = [
        (
            "carleman_boundary0",
            functools.partial(check_carleman_global, WeightKind.VARPHI_BOUNDARY_0),
            functools.partial(_reference, Scenario.BOUNDARY),
        ),
        (
            "carleman_boundary1",
            functools.partial(check_carleman_global, WeightKind.VARPHI_BOUNDARY_1),
            _boundary_one,
        ),
        (
            "carleman_interior",
            functools.partial(check_carleman_global, WeightKind.GAMMA_INTERIOR),
            functools.partial(_reference, Scenario.INTERIOR),
        ),
        (
            "carleman_nondeg",
            functools.partial(check_carleman_global, WeightKind.PHI_NONDEG),
            functools.partial(_reference, Scenario.NONDEGENERATE),
        ),
        (
            "carleman_local",
            functools.partial(check_carleman_local, None),
            functools.partial(_reference, Scenario.BOUNDARY),
        ),
    ]
    return [_refinement_outcome(run_dir, name, check, build) for name, check, build in cases]


def _acceptance_observability(run_dir: RunDirectory, seed: int) -> list[Outcome]:
    check = functools.partial(check_observability, ensemble_size=32, seed=seed)
    return [
        _refinement_outcome(
            run_dir, f"observability_{scenario}", check, functools.partial(_reference, scenario)
        )
        for scenario in (Scenario.BOUNDARY, Scenario.INTERIOR)
    ]


def _acceptance_convergence(run_dir: RunDirectory) -> list[Outcome]:
    outcomes = []
    for study in (temporal_order(), spatial_order(), adjoint_agreement()):
        _write_study(run_dir, study)
        outcomes.append(
            Outcome(
                name=f"order_{study.name}",
                passed=study.passed,
                value=study.observed_order,
                threshold=study.threshold,
                criterion="observed order on the finest refinement",
            )
        )
    return outcomes


def _selftest(
    config: ExperimentConfig,
    run_dir: RunDirectory,
    options: RunOptions,
    family: InequalityFamily | None,
) -> list[str]:
    del family
    seed = config.seed
    suites: list[Callable[[], list[Outcome]]] = [
        functools.partial(_acceptance_duality, run_dir, seed),
        functools.partial(_acceptance_gramian, run_dir, seed),
        functools.partial(_acceptance_hardy, run_dir),
        functools.partial(_acceptance_energy, run_dir, seed),
        functools.partial(_acceptance_convergence, run_dir),
        functools.partial(_acceptance_carleman, run_dir),
        functools.partial(_acceptance_observability, run_dir, seed),
        functools.partial(_acceptance_control, run_dir, options.progress),
    ]
    outcomes: list[Outcome] = []
    for suite in tqdm(suites, desc="selftest", disable=not options.progress):
        outcomes += suite()
    table = pd.DataFrame([dataclasses.asdict(o) for o in outcomes])
    run_dir.table("selftest.csv", table)
    for outcome in outcomes:
        status = "PASS" if outcome.passed else "FAIL"
        logger.info(f"{status} {outcome.name}: {outcome.value:.3e} vs {outcome.threshold:.1e}")
    return [o.name for o in outcomes if not o.passed]


_HANDLERS: dict[Command, Handler] = {
    Command.SOLVE: _solve,
    Command.CONTROL: _control,
    Command.VERIFY: _verify,
    Command.SWEEP: _sweep,
    Command.SELFTEST: _selftest,
}
