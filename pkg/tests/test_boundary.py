import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st
from munch import Munch

from bnspde.boundary import (BoundaryConditionError, BoundaryMap, DirichletUnsupportedError,
                             neumann_continuity_probe, read_boundary_csv, smoothed_lambda_apply,
                             smoothed_lambda_norm, trace_adjoint_residual)
from bnspde.diagnostics import neumann_oracle_study, trace_adjoint_study
from bnspde.elliptic import DiscreteOperatorFamily, constant_coefficients, make_coefficients
from bnspde.settings import ANCHORS, default_settings
from bnspde.spatial import extend_boundary, make_grid
from bnspde.variational import cosine_profile


def make_map(dimension=1, n=32, coeffs=None, shift_w=1.0):
    grid = make_grid(dimension, n)
    return BoundaryMap(DiscreteOperatorFamily(grid, coeffs or constant_coefficients(), shift_w=shift_w))


def test_dirichlet_is_rejected_with_anchor():
    family = DiscreteOperatorFamily(make_grid(1, 8), constant_coefficients())
    with pytest.raises(DirichletUnsupportedError) as e:
        BoundaryMap(family, condition="dirichlet")
    assert ANCHORS["dirichlet"] in str(e.value)


def test_neumann_oracle_is_second_order():
    rows, order = neumann_oracle_study((64, 128, 256))
    assert order >= 1.9
    assert rows[-1][1] < 1e-4


def test_neumann_solution_has_prescribed_flux_in_the_limit():
    boundary_map = make_map(1, 256)
    x = boundary_map.neumann_solve(0.0, np.array([0.0, math.sinh(1.0)]))
    assert x[0] == pytest.approx(1.0, abs=1e-4)
    assert x[-1] == pytest.approx(math.cosh(1.0), abs=1e-4)


@pytest.mark.parametrize("dimension", [1, 2])
def test_lambda_is_boundary_flux_density(dimension):
    boundary_map = make_map(dimension, 8)
    grid = boundary_map.grid
    y = np.linspace(-1.0, 1.0, grid.boundary_size)
    expected = extend_boundary(grid, grid.boundary_weights * y) / grid.weights
    np.testing.assert_allclose(boundary_map.lambda_apply(0.0, y), expected, atol=1e-9)


@given(st.integers(0, 2**31), st.integers(1, 2))
@hypothesis_settings(max_examples=20, deadline=None)
def test_trace_adjoint_identity_holds_for_grid_vectors(seed, dimension):
    coeffs = make_coefficients(Munch(default_settings.coefficients, type="oscillating", amplitude=0.5))
    boundary_map = make_map(dimension, 8, coeffs)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(boundary_map.grid.boundary_size)
    phi = rng.standard_normal(boundary_map.grid.size)
    assert trace_adjoint_residual(boundary_map, 0.3, y, phi) < 1e-9


@pytest.mark.parametrize("dimension", [1, 2])
def test_trace_adjoint_study(dimension):
    sizes = (64, 128, 256) if dimension == 1 else (8, 16, 32)
    rows, order, passed = trace_adjoint_study(sizes, dimension)
    assert passed
    assert rows[-1][1] <= 1e-2


def test_trace_identity_requires_zero_flux():
    boundary_map = make_map(1, 16)
    grid = boundary_map.grid
    phi = grid.nodes[:, 0]
    with pytest.raises(BoundaryConditionError):
        trace_adjoint_residual(boundary_map, 0.0, np.ones(2), phi, phi_flux=np.array([-1.0, 1.0]))
    _, flux = cosine_profile(grid, 2)
    trace_adjoint_residual(boundary_map, 0.0, np.ones(2), phi, phi_flux=flux)


def test_smoothed_lambda_at_theta_one_is_neumann_map():
    boundary_map = make_map(1, 32)
    y = np.array([0.3, -1.2])
    np.testing.assert_allclose(smoothed_lambda_apply(boundary_map, boundary_map.family, 0.0, 1.0, y),
                               boundary_map.neumann_solve(0.0, y), atol=1e-10)


@pytest.mark.parametrize("theta", [0.39, 1.01])
def test_smoothed_lambda_rejects_theta_outside_range(theta):
    boundary_map = make_map(1, 16)
    with pytest.raises(ValueError):
        smoothed_lambda_apply(boundary_map, boundary_map.family, 0.0, theta, np.ones(2))


def test_smoothing_removes_norm_growth_under_refinement():
    norms = [smoothed_lambda_norm(make_map(1, n), 0.0, 0.9) for n in (16, 32, 64)]
    assert norms[2] / norms[1] < 1.1
    raw = []
    for n in (32, 64):
        boundary_map = make_map(1, n)
        raw.append(boundary_map.operator_norm(boundary_map.operator_columns(0.0, boundary_map.lambda_apply)))
    assert raw[1] / raw[0] == pytest.approx(math.sqrt(2.0), rel=1e-6)


def test_neumann_continuity_probe():
    assert neumann_continuity_probe(make_map(1, 16), T=1.0, levels=3) == (1.0, 0.0)
    coeffs = make_coefficients(Munch(default_settings.coefficients, type="oscillating", amplitude=0.5, frequency=1.0))
    exponent, constant = neumann_continuity_probe(make_map(1, 16, coeffs), T=1.0, levels=4)
    assert exponent > 0.5
    assert constant > 0.0


def test_boundary_csv(tmp_path):
    grid = make_grid(2, 4)
    filename = str(tmp_path / "y.csv")
    pd.DataFrame({"index": [0, 5], "value": [1.5, -2.0]}).to_csv(filename, index=False)
    y = read_boundary_csv(filename, grid)
    assert y[0] == 1.5 and y[5] == -2.0 and np.count_nonzero(y) == 2
    pd.DataFrame({"index": [16], "value": [1.0]}).to_csv(filename, index=False)
    with pytest.raises(BoundaryConditionError):
        read_boundary_csv(filename, grid)


@pytest.mark.parametrize("dimension", [1, 2])
def test_grid_vectors_need_no_flux_certificate(dimension):
    boundary_map = make_map(dimension, 16)
    grid = boundary_map.grid
    phi = grid.nodes[:, 0]
    y = np.linspace(-1.0, 2.0, grid.boundary_size)
    assert trace_adjoint_residual(boundary_map, 0.0, y, phi) < 1e-10
