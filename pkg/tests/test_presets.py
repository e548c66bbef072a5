"""Tests for the named rate and datum families."""

from __future__ import annotations

import numpy as np
import pytest

from degenpop.model import Lattice
from degenpop.presets import (
    BetaKind,
    BetaPreset,
    InitialKind,
    InitialPreset,
    MuKind,
    MuPreset,
    Scenario,
    random_smooth_field,
    reference_problem,
    sin2_bump,
)


@pytest.fixture(scope="module")
def lattice() -> Lattice:
    return Lattice.build(T=1.0, A=2.0, nx=17, nt=16)


def test_sin2_bump_support() -> None:
    a = np.linspace(0.0, 2.0, 9)
    bump = sin2_bump(a, 0.5, 1.5)
    assert np.all(bump[a <= 0.5] == 0.0)
    assert np.all(bump[a >= 1.5] == 0.0)
    assert bump[4] == pytest.approx(1.0)


def test_mu_presets() -> None:
    a = np.array([0.0, 1.0, 2.0])
    constant = MuPreset(value=0.3).build()
    np.testing.assert_allclose(constant(0.0, a, 0.5), 0.3)
    poly = MuPreset(kind=MuKind.POLYNOMIAL_AGE, coefficients=(1.0, 2.0)).build()
    np.testing.assert_allclose(poly(0.0, a, 0.5), [1.0, 3.0, 5.0])


def test_beta_vanishes_before_onset() -> None:
    a = np.linspace(0.0, 2.0, 9)
    for preset in (
        BetaPreset(),
        BetaPreset(kind=BetaKind.POLYNOMIAL_AGE, coefficients=(1.0,)),
    ):
        values = preset.build(0.5, 2.0)(a, 0.3)
        assert np.all(values[a <= 0.5] == 0.0)
        assert np.all(values[a > 0.5] > 0.0)
    assert not np.any(BetaPreset(kind=BetaKind.ZERO).build(0.5, 2.0)(a, 0.3))


def test_beta_gaussian_peaks_at_center() -> None:
    beta = BetaPreset(amplitude=2.0).build(0.5, 2.0)
    assert float(beta(1.25, 0.5)) == pytest.approx(2.0)


def test_rate_presets_reject_negative_values() -> None:
    with pytest.raises(ValueError, match="value"):
        MuPreset(value=-1.0)
    with pytest.raises(ValueError, match="width"):
        BetaPreset(width=0.0)


@pytest.mark.parametrize("kind", list(InitialKind))
def test_initial_data_vanish_on_boundary(lattice: Lattice, kind: InitialKind) -> None:
    y0 = InitialPreset(kind=kind).build(lattice)
    assert y0.shape == lattice.slice_shape
    assert not np.any(y0[:, [0, -1]])


def test_separable_mode_age_support(lattice: Lattice) -> None:
    y0 = InitialPreset(kind=InitialKind.SEPARABLE_MODE, age_center=0.5, age_width=0.2).build(
        lattice
    )
    a = np.asarray(lattice.a)
    assert not np.any(y0[a >= 0.9])
    assert np.any(y0[a < 0.9])


def test_random_field_respects_support(lattice: Lattice) -> None:
    active = np.ones(lattice.nx, dtype=bool)
    active[[0, -1]] = False
    field = random_smooth_field(
        np.random.default_rng(0), lattice, active, age_support=(1.5, 2.0)
    )
    a = np.asarray(lattice.a)
    assert not np.any(field[a <= 1.5])
    assert not np.any(field[:, [0, -1]])
    assert np.any(field)


def test_random_field_is_seeded(lattice: Lattice) -> None:
    active = np.ones(lattice.nx, dtype=bool)
    first = random_smooth_field(np.random.default_rng(7), lattice, active)
    second = random_smooth_field(np.random.default_rng(7), lattice, active)
    np.testing.assert_array_equal(first, second)


def test_reference_scenarios() -> None:
    interior = reference_problem(Scenario.INTERIOR, nx=17, nt=16)
    assert interior.k.degeneracy_point == 0.5
    assert len(interior.omega.intervals) == 2
    nondegenerate = reference_problem(Scenario.NONDEGENERATE, nx=17, nt=16)
    assert nondegenerate.k.degeneracy_point is None
    assert nondegenerate.lattice.tag == "17x32x16"
