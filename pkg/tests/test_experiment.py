"""Tests for experiment files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from degenpop.experiment import (
    ConfigError,
    ExperimentConfig,
    LatticeBlock,
    UnsupportedFormatError,
    default_omega_inner,
    parse_config,
    structure_config,
)
from degenpop.model import ControlRegion, Regime, Scheme

CONFIGS = Path(__file__).parents[1] / "configs"


def _document(**problem: Any) -> dict[str, Any]:
    base = {"T": 1.0, "A": 2.0, "abar": 0.5, "delta": 1.5, "omega": [[0.3, 0.8]]}
    return {"name": "small", "problem": base | problem, "lattice": {"nx": 17, "nt": 16}}


def test_minimal_document_gets_defaults() -> None:
    config = structure_config(_document())
    assert config.problem.coefficient.regime is Regime.BOUNDARY_0
    assert config.problem.scheme is Scheme.IMPLICIT_EULER
    assert config.hum.epsilon == pytest.approx(1e-8)
    assert config.verify.ensemble_size == 32
    assert config.seed == 0


def test_problem_is_built_on_the_declared_lattice() -> None:
    problem = structure_config(_document()).build_problem()
    assert problem.lattice.tag == "17x32x16"
    assert problem.omega == ControlRegion.of((0.3, 0.8))


def test_delta_equal_to_final_time_is_reported_with_its_path() -> None:
    with pytest.raises(ConfigError) as info:
        structure_config(_document(delta=1.0))
    assert "delta must exceed T @ $.problem.delta" in info.value.errors


def test_all_cross_field_errors_are_reported() -> None:
    with pytest.raises(ConfigError) as info:
        structure_config(_document(delta=1.0, abar=1.5))
    assert "abar must not exceed T @ $.problem.abar" in info.value.errors
    assert len(info.value.errors) == 2


def test_unknown_keys_are_rejected() -> None:
    document = _document()
    document["lattice"]["steps"] = 4
    with pytest.raises(ConfigError) as info:
        structure_config(document)
    assert any("$.lattice" in e for e in info.value.errors)


def test_missing_required_key_is_rejected() -> None:
    document = _document()
    del document["problem"]["delta"]
    with pytest.raises(ConfigError):
        structure_config(document)


def test_interior_point_must_be_observed() -> None:
    coefficient = {"regime": "interior_weak", "alpha": 0.5, "x0": 0.5}
    with pytest.raises(ConfigError) as info:
        structure_config(_document(coefficient=coefficient, omega=[[0.6, 0.8]]))
    assert any(e.endswith("@ $.problem.coefficient.x0") for e in info.value.errors)


def test_misaligned_lattice_is_reported_on_the_problem() -> None:
    document = _document(A=2.3)
    with pytest.raises(ConfigError) as info:
        structure_config(document)
    assert any(e.endswith("@ $.problem") for e in info.value.errors)


@pytest.mark.parametrize("name", ["reference_boundary.json", "reference_interior.toml"])
def test_bundled_configs_parse(name: str) -> None:
    config = parse_config(CONFIGS / name)
    assert config.problem.T == 1.0
    assert config.lattice == LatticeBlock(nx=65, nt=32)


def test_toml_interior_config() -> None:
    config = parse_config(CONFIGS / "reference_interior.toml")
    assert config.problem.coefficient.x0 == 0.5
    assert config.problem.omega == ((0.2, 0.4), (0.6, 0.8))
    assert config.hum.two_phase


def test_json_and_toml_agree(tmp_path: Path) -> None:
    json_path = tmp_path / "small.json"
    json_path.write_text(json.dumps(_document()), encoding="utf-8")
    toml_path = tmp_path / "small.toml"
    toml_path.write_text(
        'name = "small"\n'
        "[problem]\nT = 1.0\nA = 2.0\nabar = 0.5\ndelta = 1.5\nomega = [[0.3, 0.8]]\n"
        "[lattice]\nnx = 17\nnt = 16\n",
        encoding="utf-8",
    )
    assert parse_config(json_path) == parse_config(toml_path)


def test_unsupported_suffix(tmp_path: Path) -> None:
    path = tmp_path / "config.yaml"
    path.write_text("name: x\n", encoding="utf-8")
    with pytest.raises(UnsupportedFormatError):
        parse_config(path)


def test_invalid_json(tmp_path: Path) -> None:
    path = tmp_path / "config.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(path)


def test_refined_lattice_doubles_space_cells() -> None:
    config = structure_config(_document())
    assert config.refined_lattice() == LatticeBlock(nx=33, nt=16)


def test_default_omega_inner_is_middle_half() -> None:
    inner = default_omega_inner(ControlRegion.of((0.2, 0.6)))
    assert len(inner.intervals) == 1
    assert inner.intervals[0] == pytest.approx((0.3, 0.5))


def test_config_echo_is_plain(tmp_path: Path) -> None:
    document = _document()
    document["output"] = {"directory": str(tmp_path)}
    echo = structure_config(document).to_dict()
    assert echo["problem"]["delta"] == 1.5
    assert echo["output"]["directory"] == tmp_path.as_posix()
    assert isinstance(structure_config(document), ExperimentConfig)
