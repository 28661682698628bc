"""Discrete residual of the variational formulation, tested against catalog test functions."""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd

from bnspde.boundary import BoundaryConditionError
from bnspde.spatial import boundary_inner, inner, trace
from bnspde.utils import warn, write_table

CERTIFICATE_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A time-dependent test function with analytic time derivative.

    Attributes:
        name: catalog name
        profile: t -> phi(t) on the grid nodes
        derivative: t -> phi'(t)
        flux: t -> conormal derivative of phi(t) at the boundary nodes
        time_varying_domain: True when the operator domain moves with t
    """
    __test__ = False

    name: str
    profile: Callable
    derivative: Callable
    flux: Callable
    time_varying_domain: bool = False

    def certificate(self, times):
        """Largest boundary flux of phi over the given times."""
        return max(float(np.max(np.abs(self.flux(t)), initial=0.0)) for t in times)


def cosine_gradient(grid, mode):
    """Gradient of prod_k cos(mode pi s_k) at the boundary nodes, shape (boundary size, d)."""
    k = mode * np.pi
    boundary = grid.boundary_coordinates
    gradient = np.zeros_like(boundary)
    for axis in range(grid.dimension):
        others = np.prod(np.cos(k * np.delete(boundary, axis, axis=1)), axis=1)
        gradient[:, axis] = -k * np.sin(k * boundary[:, axis]) * others
    return gradient


def conormal_derivative(grid, gradient, diffusion):
    """n . (a grad phi) at the boundary nodes for a diagonal coefficient a of shape (boundary size, d)."""
    return np.sum(diffusion * gradient * grid.boundary_normals, axis=1)


def cosine_profile(grid, mode):
    """cos(mode pi s) per axis and its outward normal derivative on the boundary."""
    values = np.prod(np.cos(mode * np.pi * grid.nodes), axis=1)
    return values, conormal_derivative(grid, cosine_gradient(grid, mode), 1.0)


def make_test_function(name, solver, mode=1):
    """Catalog: constant, linear (1 + t) cos(mode pi s), eigenvector e^{-t} v_mode of A_h(0)."""
    grid = solver.grid
    zero_flux = np.zeros(grid.size)[grid.boundary_nodes]
    if name == "constant":
        one = np.ones(grid.size)
        return TestFunction(name, lambda t: one, lambda t: np.zeros(grid.size), lambda t: zero_flux)
    if name == "linear":
        psi, _ = cosine_profile(grid, mode)
        gradient = cosine_gradient(grid, mode)
        a = solver.family.coeffs
        return TestFunction(name,
                            lambda t: (1.0 + t) * psi,
                            lambda t: psi,
                            lambda t: (1.0 + t) * conormal_derivative(grid, gradient,
                                                                      a.diffusion(t, grid.boundary_coordinates)),
                            time_varying_domain=not a.autonomous)
    if name == "eigenvector":
        _, V = solver.family.eigen(0.0)
        v = V[:, -1 - mode]
        return TestFunction(name,
                            lambda t: math.exp(-t) * v,
                            lambda t: -math.exp(-t) * v,
                            lambda t: zero_flux,
                            time_varying_domain=not solver.family.coeffs.autonomous)
    raise NotImplementedError(f"unknown test function \"{name}\"")


def variational_residual(solver, trajectory, phi, pairing="lambda"):
    """|<U(T), phi(T)> - <u0, phi(0)> - RHS| for one path.

    RHS sums with left-endpoint quadrature
        dt (<U_k, phi'_k> + <U_k, A_h(t_k) phi_k> + <F(U_k), phi_k> + <Lambda G(U_k), phi_k>)
    and the stochastic terms <B(U_k) dW1_k, phi_k> + <Lambda C(U_k) dW2_k, phi_k>,
    driven by the increments the trajectory used. With pairing "trace" the
    boundary terms are <G(U_k), tr phi_k> on the boundary instead.
    """
    assert pairing in ("lambda", "trace"), f"unknown pairing {pairing}"
    grid = solver.grid
    lattice = solver.lattice.coarsen(trajectory.coarsen)
    if trajectory.states.shape != (lattice.M + 1, grid.size):
        raise ValueError(f"lattice mismatch: trajectory has states {trajectory.states.shape}, "
                         f"solver expects {(lattice.M + 1, grid.size)}")
    times = lattice.times
    certificate = phi.certificate(times)
    if certificate > CERTIFICATE_TOLERANCE:
        raise BoundaryConditionError(f"test function {phi.name} has boundary flux {certificate:.3e}; "
                                     f"it is not in the domain of the adjoint operator")
    if phi.time_varying_domain:
        warn(f"test function {phi.name}: boundary condition enforced at lattice times only")

    increments = solver.noise_increments([trajectory.path], trajectory.coarsen) if trajectory.addresses \
        else {"interior": None, "boundary": None}

    def boundary_pairing(t, y, phi_t):
        if pairing == "lambda":
            return inner(grid, solver.boundary_map.lambda_apply(t, y), phi_t)
        return boundary_inner(grid, y, trace(grid, phi_t))

    U = trajectory.states
    lhs = inner(grid, U[-1], phi.profile(times[-1])) - inner(grid, U[0], phi.profile(times[0]))
    rhs = 0.0
    dt = lattice.dt
    nl = solver.nonlinearities
    for k in range(lattice.M):
        t = times[k]
        phi_t = phi.profile(t)
        drift = inner(grid, U[k], phi.derivative(t)) + inner(grid, solver.family.apply(t, U[k]), phi_t)
        if solver.has_drift:
            drift += inner(grid, solver.interior_drift(U[k]), phi_t)
            if not nl["G"].is_zero:
                drift += boundary_pairing(t, solver.boundary_drift(U[k]), phi_t)
        rhs += dt * drift
        if increments["interior"] is not None and solver.has_interior_noise:
            field = solver.interior_noise.synthesize(increments["interior"][k][:, 0])
            rhs += inner(grid, nl["B"](U[k]) * field, phi_t)
        if increments["boundary"] is not None and solver.has_boundary_noise:
            field = solver.boundary_noise.synthesize(increments["boundary"][k][:, 0])
            rhs += boundary_pairing(t, solver.boundary_field(nl["C"](solver.mean(U[k]))) * field, phi_t)
    return float(abs(lhs - rhs))


def write_residual_table(filename, rows, header=()):
    """CSV with columns path, phi, dt, h, residual."""
    write_table(filename, pd.DataFrame(rows, columns=["path", "phi", "dt", "h", "residual"]), header)
