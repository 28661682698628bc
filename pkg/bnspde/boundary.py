"""The discrete Neumann map N_h(t) and the boundary forcing operator Lambda_h(t)."""

import math

import numpy as np
import pandas as pd

from bnspde.elliptic import fractional_power_apply
from bnspde.settings import ANCHORS
from bnspde.spatial import boundary_inner, extend_boundary, inner
from bnspde.utils import fit_power_law


class BoundaryConditionError(ValueError):
    pass


class DirichletUnsupportedError(ValueError):
    pass


class BoundaryMap:
    """Neumann map and boundary forcing for a DiscreteOperatorFamily.

    N_h(t) y solves (w - A_h(t)) x = 0 in the interior with conormal flux y on
    the boundary. The flux enters through the boundary quadrature weight at the
    flux slot of each boundary control volume. Lambda_h(t) = (w - A_h(t)) N_h(t)
    maps boundary data to the interior forcing of the evolution equation.
    """

    def __init__(self, family, condition="neumann", alpha=1.2):
        if condition == "dirichlet":
            raise DirichletUnsupportedError(
                f"Dirichlet boundary conditions are not supported: '{ANCHORS['dirichlet']}'")
        if condition != "neumann":
            raise NotImplementedError(f"unknown boundary condition \"{condition}\"")
        self.family = family
        self.grid = family.grid
        self.alpha = alpha

    def flux_vector(self, y):
        y = np.asarray(y, dtype=np.float64)
        weights = self.grid.boundary_weights if y.ndim == 1 else self.grid.boundary_weights[:, None]
        return extend_boundary(self.grid, weights * y)

    def neumann_solve(self, t, y):
        lu = self.family.factor(t, self.family.shift_w, 1.0)
        return lu.solve(self.flux_vector(y))

    def lambda_apply(self, t, y):
        x = self.neumann_solve(t, y)
        return self.family.shift_w * x - self.family.apply(t, x)

    def operator_columns(self, t, apply):
        """Columns apply(t, e_b) for a boundary-orthonormal basis e_b."""
        basis = np.diag(1.0 / np.sqrt(self.grid.boundary_weights))
        return apply(t, basis)

    def operator_norm(self, columns):
        """Norm of a map from L^2(boundary) to L^2(S) given by its columns."""
        scaled = np.sqrt(self.grid.weights)[:, None] * columns
        return float(np.linalg.norm(scaled, 2))


def neumann_solve(boundary_map, t, y):
    return boundary_map.neumann_solve(t, y)


def lambda_apply(boundary_map, t, y):
    return boundary_map.lambda_apply(t, y)


def trace_adjoint_residual(boundary_map, t, y, phi, phi_flux=None, tolerance=1e-8):
    """|<Lambda_h(t) y, phi>_w - <y, tr phi>_boundary|.

    ``phi_flux`` is the analytic conormal derivative of phi at the boundary
    nodes, given when phi samples a continuous profile; BoundaryConditionError
    is raised unless it vanishes. Without ``phi_flux`` nothing is checked: the
    conormal condition is natural in the finite-volume stencil, so every grid
    vector lies in the domain of the discrete operator and the identity holds
    up to round-off.
    """
    if phi_flux is not None:
        worst = float(np.max(np.abs(phi_flux))) if np.size(phi_flux) else 0.0
        if worst > tolerance:
            raise BoundaryConditionError(
                f"test function has boundary flux {worst:.3e} > {tolerance:g}; "
                f"the trace identity only holds for homogeneous conormal data")
    grid = boundary_map.grid
    forced = boundary_map.lambda_apply(t, y)
    return float(abs(inner(grid, forced, phi) - boundary_inner(grid, y, np.asarray(phi)[grid.boundary_nodes])))


def smoothed_lambda_apply(boundary_map, family, t, theta, y):
    """(w - A_h(t))^{-theta} Lambda_h(t) y for theta in [1 - alpha/2, 1]."""
    low = 1.0 - boundary_map.alpha / 2.0
    if not low <= theta <= 1.0:
        raise ValueError(f"theta = {theta} outside the admissible interval [{low:g}, 1] "
                         f"for alpha = {boundary_map.alpha}")
    return fractional_power_apply(family, t, -theta, boundary_map.lambda_apply(t, y))


def smoothed_lambda_norm(boundary_map, t, theta):
    """Operator norm of (w - A_h(t))^{-theta} Lambda_h(t) from L^2(boundary) to L^2(S)."""
    family = boundary_map.family
    columns = boundary_map.operator_columns(
        t, lambda t, y: smoothed_lambda_apply(boundary_map, family, t, theta, y))
    return boundary_map.operator_norm(columns)


def neumann_continuity_probe(boundary_map, T=1.0, levels=4):
    """Fit the Hölder exponent and constant of t -> N_h(t) on dyadic time lags."""
    times = np.linspace(0.0, T, 2**levels + 1)
    maps = [boundary_map.operator_columns(t, boundary_map.neumann_solve) for t in times]
    lags, increments = [], []
    for j in range(1, levels + 1):
        step = 2**(levels - j)
        worst = max(boundary_map.operator_norm(maps[i + step] - maps[i]) for i in range(len(times) - step))
        lags.append(T * 2.0**(-j))
        increments.append(worst)
    if max(increments) == 0.0:
        return 1.0, 0.0
    exponent, intercept, _ = fit_power_law(lags, increments)
    return float(exponent), float(math.exp(intercept))


def read_boundary_csv(filename, grid):
    """Boundary data from a CSV with columns (index, value)."""
    df = pd.read_csv(filename, comment="#", float_precision="round_trip")
    values = np.zeros(grid.boundary_size)
    index = df["index"].to_numpy(dtype=int)
    if index.min() < 0 or index.max() >= grid.boundary_size:
        raise BoundaryConditionError(f"{filename}: boundary index out of range for {grid}")
    values[index] = df["value"].to_numpy(dtype=np.float64)
    return values
