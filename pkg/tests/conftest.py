"""Shared fixtures: reference problems on small lattices."""

from __future__ import annotations

import pytest

from degenpop.model import ProblemSetup
from degenpop.presets import Scenario, reference_problem


@pytest.fixture(scope="module")
def boundary_problem() -> ProblemSetup:
    return reference_problem(Scenario.BOUNDARY, nx=17, nt=16)


@pytest.fixture(scope="module")
def interior_problem() -> ProblemSetup:
    return reference_problem(Scenario.INTERIOR, nx=17, nt=16)


@pytest.fixture(scope="module")
def nondegenerate_problem() -> ProblemSetup:
    return reference_problem(Scenario.NONDEGENERATE, nx=17, nt=16)
