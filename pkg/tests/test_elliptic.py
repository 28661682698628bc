import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from munch import Munch

from bnspde.elliptic import (DiscreteOperatorFamily, EllipticityError, SingularSystemError, assemble,
                             constant_coefficients, fractional_norm, fractional_power_apply, make_coefficients,
                             resolvent_apply, resolvent_bound_probe, validate_assumptions, write_triplets)
from bnspde.settings import default_settings
from bnspde.spatial import inner, lp_norm, make_grid


def coefficient_settings(**values):
    c = Munch(default_settings.coefficients)
    c.update(values)
    return c


@pytest.mark.parametrize("dimension, n", [(1, 64), (2, 16)])
def test_constants_are_mapped_to_potential(dimension, n):
    grid = make_grid(dimension, n)
    family = DiscreteOperatorFamily(grid, constant_coefficients(1.0, 0.3))
    np.testing.assert_array_equal(family.apply(0.0, np.ones(grid.size)), np.full(grid.size, 0.3))


def test_symmetric_form_is_exactly_symmetric():
    grid = make_grid(2, 8)
    family = DiscreteOperatorFamily(grid, make_coefficients(coefficient_settings(type="oscillating", amplitude=0.4)))
    S = family.symmetric_form(0.3)
    assert abs(S - S.T).max() == 0.0


@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(4, 16))
@hypothesis_settings(max_examples=20, deadline=None)
def test_operator_is_self_adjoint_in_weighted_inner_product(seed, dimension, n):
    grid = make_grid(dimension, n)
    family = DiscreteOperatorFamily(grid, make_coefficients(coefficient_settings(type="oscillating", amplitude=0.5)))
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal((2, grid.size))
    left = inner(grid, family.apply(0.2, f), g)
    right = inner(grid, f, family.apply(0.2, g))
    assert left == pytest.approx(right, rel=1e-10, abs=1e-10 * n * n)


def test_matrix_matches_apply():
    grid = make_grid(1, 16)
    coeffs = constant_coefficients(2.0, -0.5)
    f = np.sin(3.0 * grid.nodes[:, 0])
    np.testing.assert_allclose(assemble(coeffs, grid, 0.0) @ f, DiscreteOperatorFamily(grid, coeffs).apply(0.0, f),
                               rtol=1e-12, atol=1e-10)


def test_cosine_modes_are_discrete_eigenvectors():
    n = 32
    grid = make_grid(1, n)
    family = DiscreteOperatorFamily(grid, constant_coefficients())
    values, V = family.eigen(0.0)
    assert values[-1] == pytest.approx(0.0, abs=1e-9)
    expected = -(2.0 - 2.0 * math.cos(math.pi / n)) * n * n
    assert values[-2] == pytest.approx(expected, rel=1e-10)
    # W-orthonormal eigenvectors
    np.testing.assert_allclose(V.T @ (grid.weights[:, None] * V), np.eye(grid.size), atol=1e-10)


def test_eigen_requires_negative_spectrum_after_shift():
    family = DiscreteOperatorFamily(make_grid(1, 8), constant_coefficients(1.0, 1.0), shift_w=1.0)
    with pytest.raises(EllipticityError):
        family.eigen(0.0)


@pytest.mark.parametrize("a0", [1.0, 1.0 - 1e-13])
def test_eigen_rejects_a_vanishing_spectral_gap(a0):
    family = DiscreteOperatorFamily(make_grid(2, 8), constant_coefficients(1.0, a0), shift_w=1.0)
    with pytest.raises(EllipticityError):
        fractional_power_apply(family, 0.0, -0.5, np.ones(family.grid.size))
    values, _ = DiscreteOperatorFamily(make_grid(2, 8), constant_coefficients(1.0, 0.5), shift_w=1.0).eigen(0.0)
    assert values[-1] == pytest.approx(0.5, abs=1e-10)


@pytest.mark.parametrize("dimension, n", [(1, 64), (2, 8), (2, 16), (2, 32)])
def test_stiffness_action_vanishes_on_constants(dimension, n):
    grid = make_grid(dimension, n)
    family = DiscreteOperatorFamily(grid, make_coefficients(coefficient_settings(type="oscillating", amplitude=0.4)))
    assert np.all(family.symmetric_apply(0.3, np.full(grid.size, 0.7)) == 0.0)
    f = np.random.default_rng(n).standard_normal((grid.size, 3))
    np.testing.assert_allclose(family.symmetric_apply(0.3, f), family.symmetric_form(0.3) @ f, atol=1e-10)
    np.testing.assert_allclose(family.apply(0.3, f[:, 0]), family.matrix(0.3) @ f[:, 0], atol=1e-8)


def test_negative_diffusion_is_rejected():
    family = DiscreteOperatorFamily(make_grid(1, 8), constant_coefficients(-1.0))
    with pytest.raises(EllipticityError):
        family.assemble(0.0)


def test_step_coefficient_fails_after_the_jump():
    coeffs = make_coefficients(coefficient_settings(type="step", a=1.0, amplitude=-2.0, t0=0.5))
    family = DiscreteOperatorFamily(make_grid(1, 8), coeffs)
    family.assemble(0.25)
    with pytest.raises(EllipticityError, match="t = 0.75"):
        family.assemble(0.75)


def test_resolvent_solves_shifted_system():
    grid = make_grid(2, 8)
    family = DiscreteOperatorFamily(grid, make_coefficients(coefficient_settings(type="holder", amplitude=0.3)))
    f = np.cos(np.pi * grid.nodes[:, 0]) + grid.nodes[:, 1]
    x = resolvent_apply(family, 0.1, 2.5, f)
    np.testing.assert_allclose(2.5 * x - family.apply(0.1, x), f, atol=1e-10)


def test_singular_system_is_reported():
    family = DiscreteOperatorFamily(make_grid(1, 8), constant_coefficients())
    with pytest.raises(SingularSystemError):
        family.factor(0.0, 0.0, 1.0)


def test_factorizations_are_cached():
    family = DiscreteOperatorFamily(make_grid(1, 8), constant_coefficients())
    assert family.factor(0.0, 1.0, 0.1) is family.factor(0.5, 1.0, 0.1)


def test_fractional_powers():
    grid = make_grid(1, 32)
    family = DiscreteOperatorFamily(grid, constant_coefficients(), shift_w=1.0)
    f = np.exp(grid.nodes[:, 0])
    np.testing.assert_allclose(fractional_power_apply(family, 0.0, 1.0, f), f - family.apply(0.0, f), atol=1e-8)
    np.testing.assert_allclose(fractional_power_apply(family, 0.0, -1.0, f), family.solve(0.0, 1.0, 1.0, f),
                               atol=1e-12)
    half = fractional_power_apply(family, 0.0, 0.5, f)
    np.testing.assert_allclose(fractional_power_apply(family, 0.0, 0.5, half),
                               fractional_power_apply(family, 0.0, 1.0, f), atol=1e-8)
    np.testing.assert_array_equal(fractional_power_apply(family, 0.0, 0.0, f), f)
    assert fractional_norm(family, 0.0, 0.0, f) == lp_norm(grid, f, 2)
    # the constant mode has (w - A)^theta 1 = 1
    assert fractional_norm(family, 0.0, 0.5, np.ones(grid.size)) == pytest.approx(1.0)


def test_validator_on_oscillating_field():
    coeffs = make_coefficients(coefficient_settings(type="oscillating", a=1.0, amplitude=0.5, frequency=0.0))
    report = validate_assumptions(coeffs)
    assert report.kappa == pytest.approx(0.5, abs=1e-12)
    assert report.holder_exponent == 1.0
    assert report.passed


def test_validator_recovers_holder_exponent():
    coeffs = make_coefficients(coefficient_settings(type="holder", a=1.0, amplitude=0.4, mu=0.6, t0=0.5))
    report = validate_assumptions(coeffs)
    assert report.holder_exponent == pytest.approx(0.6, abs=1e-6)
    assert report.holder_ok


def test_validator_flags_wrong_holder_claim():
    coeffs = make_coefficients(coefficient_settings(type="holder", a=1.0, amplitude=0.4, mu=0.6, t0=0.5))
    report = validate_assumptions(coeffs.__class__(coeffs.diffusion_fn, coeffs.potential_fn, mu=1.0,
                                                   kappa=coeffs.kappa, autonomous=False))
    assert not report.holder_ok


def test_resolvent_bound_probe():
    family = DiscreteOperatorFamily(make_grid(1, 16), constant_coefficients())
    K, ratios = resolvent_bound_probe(family, [1.5, 2.0, 10.0], [0.0])
    assert K == pytest.approx(1.0, abs=1e-6)
    assert len(ratios) == 3


def test_triplets(tmp_path):
    grid = make_grid(2, 4)
    matrix = DiscreteOperatorFamily(grid, constant_coefficients()).matrix(0.0)
    filename = str(tmp_path / "A.txt")
    write_triplets(filename, matrix)
    df = pd.read_csv(filename, sep=" ")
    assert len(df) == matrix.nnz
    assert df["value"].sum() == pytest.approx(matrix.sum())
