"""Tests for the application settings."""

from __future__ import annotations

from pathlib import Path

import pytest

from degenpop.config import CONFIG_PATH, GlobalSettings, global_settings


def test_settings_file_is_mandatory_and_present() -> None:
    assert CONFIG_PATH.startswith("!")
    assert Path(CONFIG_PATH.removeprefix("!")).is_file()


def test_global_settings_read_from_file() -> None:
    assert global_settings.DUALITY_TOL == pytest.approx(1e-10)
    assert global_settings.FIXED_POINT_MAX_ITER == 50
    assert global_settings.REFINEMENT_DRIFT == pytest.approx(2.0)


def test_global_settings_validate_tolerances() -> None:
    with pytest.raises(ValueError, match="DEFAULT_CG_TOL"):
        GlobalSettings(DEFAULT_CG_TOL=1.5)
