"""Tests for the commands and their exit codes."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from degenpop.export import read_slab
from degenpop.experiment import ExperimentConfig, structure_config
from degenpop.main import _dispatch, run_options
from degenpop.model import ConfigurationError, NumericalError
from degenpop.runner import (
    AcceptanceError,
    Command,
    ExitCode,
    RunOptions,
    exit_code_for,
    run,
    sweep_points,
)
from degenpop.verify import InequalityFamily


def _config(**overrides: Any) -> ExperimentConfig:
    document: dict[str, Any] = {
        "name": "small",
        "problem": {
            "T": 1.0,
            "A": 2.0,
            "abar": 0.5,
            "delta": 1.5,
            "omega": [[0.3, 0.8]],
            "y0": {"kind": "zero"},
        },
        "lattice": {"nx": 17, "nt": 16},
    }
    document.update(overrides)
    return structure_config(document)


@pytest.fixture
def options(tmp_path: Path) -> RunOptions:
    return RunOptions(out_dir=tmp_path, progress=False)


def test_exit_codes_by_error_category() -> None:
    assert exit_code_for(AcceptanceError(["hardy"])) is ExitCode.ACCEPTANCE
    assert exit_code_for(NumericalError("diverged")) is ExitCode.NUMERICAL
    assert exit_code_for(ConfigurationError("bad")) is ExitCode.CONFIGURATION
    with pytest.raises(KeyError):
        exit_code_for(KeyError("other"))


def test_solve_zero_datum(options: RunOptions) -> None:
    assert run(Command.SOLVE, _config(), options) is ExitCode.SUCCESS
    run_dir = options.out_dir / "small-solve"
    values, sidecar = read_slab(run_dir / "state")
    assert not np.any(values)
    assert sidecar["shape"] == [17, 33, 17]
    assert (run_dir / "manifest.json").exists()
    assert (run_dir / "timing.json").exists()
    hypotheses = json.loads((run_dir / "hypotheses.json").read_text(encoding="utf-8"))
    assert hypotheses["structural_bound"]["passed"] is True


def test_solve_is_deterministic(tmp_path: Path) -> None:
    manifests = []
    for name in ("first", "second"):
        options = RunOptions(out_dir=tmp_path / name, progress=False)
        assert run(Command.SOLVE, _config(), options) is ExitCode.SUCCESS
        manifests.append((options.out_dir / "small-solve" / "manifest.json").read_bytes())
    assert manifests[0] == manifests[1]


def test_only_slab_format(options: RunOptions) -> None:
    config = _config(output={"formats": ["slab"]})
    assert run(Command.SOLVE, config, options) is ExitCode.SUCCESS
    run_dir = options.out_dir / "small-solve"
    assert (run_dir / "state.f64").exists()
    assert not (run_dir / "state.csv").exists()


def test_verify_hardy(options: RunOptions) -> None:
    code = run(Command.VERIFY, _config(), options, family=InequalityFamily.HARDY_POINCARE)
    assert code is ExitCode.SUCCESS
    run_dir = options.out_dir / "small-verify-hardy"
    report = json.loads((run_dir / "hardy.json").read_text(encoding="utf-8"))
    assert report["pass"] is True
    assert (run_dir / "hardy.csv").exists()
    assert "hardy" in (run_dir / "hardy.txt").read_text(encoding="utf-8")


def test_verify_duality(options: RunOptions) -> None:
    config = _config(verify={"duality_trials": 2})
    assert run(Command.VERIFY, config, options, family=InequalityFamily.DUALITY) is ExitCode.SUCCESS


def test_verify_without_family_is_a_configuration_error(options: RunOptions) -> None:
    assert run(Command.VERIFY, _config(), options) is ExitCode.CONFIGURATION


def test_strict_hypotheses_abort(tmp_path: Path) -> None:
    problem = _config().problem
    config = _config(
        problem={
            "T": problem.T,
            "A": problem.A,
            "abar": problem.abar,
            "delta": problem.delta,
            "omega": [[0.3, 0.8]],
            "coefficient": {"regime": "boundary0", "alpha": 2.0},
        }
    )
    strict = RunOptions(out_dir=tmp_path, strict_hypotheses=True, progress=False)
    assert run(Command.SOLVE, config, strict) is ExitCode.CONFIGURATION
    lenient = RunOptions(out_dir=tmp_path, progress=False)
    assert run(Command.SOLVE, config, lenient) is ExitCode.SUCCESS


def test_control_of_zero_datum(options: RunOptions) -> None:
    assert run(Command.CONTROL, _config(), options) is ExitCode.SUCCESS
    run_dir = options.out_dir / "small-control"
    summary = json.loads((run_dir / "control.json").read_text(encoding="utf-8"))
    assert summary["pass"] is True
    assert summary["cg_iters"] == 0
    assert (run_dir / "cg_history.csv").exists()


def test_sweep_points_cross_grids_and_epsilons() -> None:
    grids = [{"nx": 9, "nt": 8}, {"nx": 17, "nt": 16}]
    config = _config(sweep={"grids": grids, "epsilon": [1e-4, 1e-6]})
    points = sweep_points(config)
    assert [p.slug for p in points] == ["point-000", "point-001", "point-002", "point-003"]
    assert [p.epsilon for p in points] == [1e-4, 1e-6, 1e-4, 1e-6]


def test_sweep_writes_points_and_carleman_table(options: RunOptions) -> None:
    config = _config(sweep={"grids": [{"nx": 9, "nt": 8}, {"nx": 17, "nt": 16}], "epsilon": [1e-4]})
    assert run(Command.SWEEP, config, options) is ExitCode.SUCCESS
    run_dir = options.out_dir / "small-sweep"
    assert (run_dir / "sweep.csv").exists()
    assert (run_dir / "carleman.csv").exists()
    assert (run_dir / "point-001" / "control.json").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    paths = {a["path"] for a in manifest["artifacts"]}
    assert "point-000/control.json" in paths


def test_dispatch_rejects_unknown_family(tmp_path: Path) -> None:
    path = tmp_path / "small.json"
    path.write_text(json.dumps(_config().to_dict()), encoding="utf-8")
    options = RunOptions(out_dir=tmp_path, progress=False)
    assert _dispatch(Command.VERIFY, path, options, family="nope") == ExitCode.CONFIGURATION


def test_dispatch_rejects_invalid_config(tmp_path: Path) -> None:
    path = tmp_path / "broken.json"
    path.write_text('{"problem": {"T": 1.0}}', encoding="utf-8")
    options = RunOptions(out_dir=tmp_path, progress=False)
    assert _dispatch(Command.SOLVE, path, options) == ExitCode.CONFIGURATION


def test_command_line_overrides_settings(tmp_path: Path) -> None:
    options = run_options(tmp_path, 3, False)
    assert options.out_dir == tmp_path
    assert options.jobs == 3
    assert options.strict_hypotheses is False

