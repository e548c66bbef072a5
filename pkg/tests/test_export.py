"""Tests for artifact writers."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from degenpop.export import (
    MANIFEST_NAME,
    RunDirectory,
    calculate_hash,
    dumps_json,
    read_slab,
    to_jsonable,
    write_slab,
)
from degenpop.model import ProblemSetup, Regime
from degenpop.pde import solve_forward


def test_to_jsonable_converts_numpy_and_enums() -> None:
    value = {"r": Regime.BOUNDARY_0, "a": np.arange(3), "x": np.float64(0.5), "p": Path("a/b")}
    assert to_jsonable(value) == {"r": "boundary0", "a": [0, 1, 2], "x": 0.5, "p": "a/b"}
    assert to_jsonable(math.inf) == "inf"


def test_dumps_json_sorts_keys() -> None:
    assert dumps_json({"b": 1, "a": 2}).index('"a"') < dumps_json({"b": 1, "a": 2}).index('"b"')


def test_calculate_hash(tmp_path: Path) -> None:
    path = tmp_path / "abc.txt"
    path.write_bytes(b"abc")
    expected = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert calculate_hash(path) == expected


def test_slab_layout(tmp_path: Path) -> None:
    values = np.arange(6, dtype=np.float64).reshape(2, 3)
    slab, sidecar = write_slab(tmp_path / "field", values, {"a": [0.0, 1.0], "x": [0, 0.5, 1]})
    assert slab.stat().st_size == 6 * 8
    assert np.frombuffer(slab.read_bytes(), dtype="<f8")[4] == 4.0
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    assert meta["shape"] == [2, 3]
    assert meta["order"] == "C"
    assert [axis["name"] for axis in meta["axes"]] == ["a", "x"]
    restored, _ = read_slab(tmp_path / "field")
    np.testing.assert_array_equal(restored, values)


def test_slab_rejects_missing_axes(tmp_path: Path) -> None:
    with pytest.raises(ValueError, match="axes"):
        write_slab(tmp_path / "field", np.zeros((2, 2)), {"a": [0, 1]})


def test_trajectory_artifacts(tmp_path: Path, boundary_problem: ProblemSetup) -> None:
    run_dir = RunDirectory(tmp_path / "run")
    trajectory = solve_forward(boundary_problem)
    run_dir.trajectory("state", trajectory)
    names = [p.name for p in run_dir.artifacts]
    assert names == ["state.csv", "state.f64", "state.json"]
    table = pd.read_csv(run_dir.path("state.csv"))
    assert list(table.columns) == ["t", "a", "x", "value"]
    assert len(table) == trajectory.values.size


def test_manifest_is_reproducible(tmp_path: Path) -> None:
    manifests = []
    for name in ("first", "second"):
        run_dir = RunDirectory(tmp_path / name)
        run_dir.json("report.json", {"value": 1.0})
        run_dir.text("report.txt", "value 1")
        manifest = run_dir.write_manifest("verify", {"name": "x"}, seed=3)
        run_dir.write_timing(0.1 if name == "first" else 0.2)
        manifests.append(manifest.read_bytes())
    assert manifests[0] == manifests[1]
    content = json.loads(manifests[0])
    assert content["seed"] == 3
    assert [a["path"] for a in content["artifacts"]] == ["report.json", "report.txt"]
    assert MANIFEST_NAME == "manifest.json"
