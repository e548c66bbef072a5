"""
Run artifacts: CSV tables, binary slabs with JSON sidecars and the run manifest.

Everything written here is a deterministic function of its inputs, except `timing.json`,
which is kept out of the manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
from loguru import logger

from degenpop.__about__ import __version__

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    import numpy.typing as npt

    from degenpop.pde import Trajectory

SLAB_SUFFIX = ".f64"
SIDECAR_SUFFIX = ".json"
SLAB_DTYPE = "<f8"
CSV_FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars, arrays, paths and enums to plain JSON values."""
    match value:
        case Enum():
            return value.value
        case Path():
            return value.as_posix()
        case np.ndarray():
            return to_jsonable(value.tolist())
        case np.generic():
            return to_jsonable(value.item())
        case float() if not math.isfinite(value):
            return str(value)
        case dict():
            return {str(k): to_jsonable(v) for k, v in value.items()}
        case list() | tuple():
            return [to_jsonable(v) for v in value]
        case _:
            return value


def dumps_json(data: Any) -> str:
    """Serialize with sorted keys and a trailing newline."""
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, data: Any) -> Path:
    """Write `data` as deterministic JSON."""
    path.write_text(dumps_json(data), encoding="utf-8")
    return path


def write_table(path: Path, table: pd.DataFrame) -> Path:
    """Write a table as CSV with a header row and round-trip float formatting."""
    table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def trajectory_table(trajectory: Trajectory) -> pd.DataFrame:
    """Row-oriented (t, a, x, value) table of a trajectory."""
    lattice = trajectory.lattice
    t, a, x = np.meshgrid(trajectory.times, lattice.a, lattice.x, indexing="ij")
    return pd.DataFrame(
        {
            "t": t.ravel(),
            "a": a.ravel(),
            "x": x.ravel(),
            "value": np.asarray(trajectory.values).ravel(),
        }
    )


def write_slab(
    path: Path,
    values: npt.ArrayLike,
    axes: Mapping[str, npt.ArrayLike],
    metadata: Mapping[str, Any] | None = None,
) -> tuple[Path, Path]:
    """
    Write a little-endian float64 slab and its JSON sidecar.

    Args:
        path: Path of the slab without suffix.
        values: Array to write, in C order.
        axes: Coordinates of each axis, in the order of the array dimensions.
        metadata: Extra scalars stored in the sidecar.

    Returns:
        Paths of the slab and of the sidecar.
    """
    array = np.ascontiguousarray(values, dtype=SLAB_DTYPE)
    if len(axes) != array.ndim:
        msg = f"{len(axes)} axes given for an array of dimension {array.ndim}"
        raise ValueError(msg)
    slab_path = path.with_suffix(SLAB_SUFFIX)
    sidecar_path = path.with_suffix(SIDECAR_SUFFIX)
    slab_path.write_bytes(array.tobytes(order="C"))
    write_json(
        sidecar_path,
        {
            "dtype": SLAB_DTYPE,
            "order": "C",
            "shape": list(array.shape),
            "axes": [{"name": name, "values": np.asarray(v)} for name, v in axes.items()],
            "metadata": dict(metadata or {}),
        },
    )
    return slab_path, sidecar_path


def read_slab(path: Path) -> tuple[np.ndarray, dict[str, Any]]:
    """Read a slab written by `write_slab` together with its sidecar."""
    sidecar = json.loads(path.with_suffix(SIDECAR_SUFFIX).read_text(encoding="utf-8"))
    raw = np.frombuffer(path.with_suffix(SLAB_SUFFIX).read_bytes(), dtype=sidecar["dtype"])
    return raw.reshape(sidecar["shape"]), sidecar


def write_trajectory(path: Path, trajectory: Trajectory, *, csv: bool = True) -> list[Path]:
    """Write a trajectory as a slab and, optionally, as a (t, a, x, value) table."""
    lattice = trajectory.lattice
    written = list(
        write_slab(
            path,
            trajectory.values,
            {"t": trajectory.times, "a": lattice.a, "x": lattice.x},
            {"kind": trajectory.kind, "lattice": lattice.tag, **trajectory.metadata},
        )
    )
    if csv:
        written.append(write_table(path.with_suffix(".csv"), trajectory_table(trajectory)))
    return written


def calculate_hash(file_path: Path, hash_type: str = "sha256") -> str:
    """
    Calculate the hash of a given file using the specified hash algorithm.

    Args:
        file_path (Path): The path to the file whose hash needs to be calculated.
        hash_type (str): The hash type to use (e.g., 'md5', 'sha256').

    Returns:
        str: The calculated hash value in hexadecimal format.
    """
    hash_func = hashlib.new(hash_type)
    with file_path.open("rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            hash_func.update(chunk)

    return hash_func.hexdigest()


class RunDirectory:
    """
    Output directory of one run, recording every artifact it receives.

    Args:
        root: Directory of the run, created when missing.
    """

    def __init__(self, root: Path) -> None:
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self._artifacts: set[Path] = set()

    def path(self, name: str) -> Path:
        """Path of an artifact inside the run directory."""
        return self.root / name

    def register(self, *paths: Path) -> None:
        """Record artifacts written directly by a caller."""
        self._artifacts.update(paths)

    def json(self, name: str, data: Any) -> Path:
        """Write a JSON artifact."""
        path = write_json(self.path(name), data)
        self.register(path)
        return path

    def table(self, name: str, table: pd.DataFrame) -> Path:
        """Write a CSV artifact."""
        path = write_table(self.path(name), table)
        self.register(path)
        return path

    def text(self, name: str, content: str) -> Path:
        """Write a text artifact."""
        path = self.path(name)
        path.write_text(content if content.endswith("\n") else content + "\n", encoding="utf-8")
        self.register(path)
        return path

    def slab(
        self,
        name: str,
        values: npt.ArrayLike,
        axes: Mapping[str, npt.ArrayLike],
        metadata: Mapping[str, Any] | None = None,
    ) -> None:
        """Write a slab artifact and its sidecar."""
        self.register(*write_slab(self.path(name), values, axes, metadata))

    def trajectory(self, name: str, trajectory: Trajectory, *, csv: bool = True) -> None:
        """Write a trajectory artifact."""
        self.register(*write_trajectory(self.path(name), trajectory, csv=csv))

    @property
    def artifacts(self) -> Sequence[Path]:
        """Recorded artifacts sorted by relative path."""
        return sorted(self._artifacts, key=lambda p: p.relative_to(self.root).as_posix())

    def write_manifest(self, command: str, config: Any, seed: int) -> Path:
        """
        Write the manifest listing every artifact with its SHA-256 digest.

        The manifest holds no wall-clock data, so it is reproducible byte for byte.
        """
        manifest = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "config": config,
            "artifacts": [
                {"path": p.relative_to(self.root).as_posix(), "sha256": calculate_hash(p)}
                for p in self.artifacts
            ],
        }
        path = write_json(self.path(MANIFEST_NAME), manifest)
        logger.info(f"Manifest written to {path} ({len(manifest['artifacts'])} artifacts)")
        return path

    def write_timing(self, wall_seconds: float) -> Path:
        """Write the wall time of the run next to the manifest."""
        return write_json(self.path(TIMING_NAME), {"wall_seconds": round(wall_seconds, 6)})
