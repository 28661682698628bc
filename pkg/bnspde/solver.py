"""Drift-implicit Euler-Maruyama realization of the mild solution with boundary noise."""

import math
import os
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from bnspde import config
from bnspde.boundary import BoundaryMap, smoothed_lambda_norm
from bnspde.elliptic import DiscreteOperatorFamily, fractional_power_apply, make_coefficients
from bnspde.evolution import SteppingLattice, implicit_update
from bnspde.noise import BOUNDARY, INTERIOR, IncrementStream, gamma_norm, make_noise_model
from bnspde.nonlinearity import make_nonlinearities
from bnspde.settings import fingerprint
from bnspde.spatial import inner, lp_norm, make_grid, write_grid_function_csv
from bnspde.utils import ScopedTimer, log, write_ndjson

INITIAL = 3


class PathDivergedError(RuntimeError):

    def __init__(self, paths, step, norms):
        self.paths = list(paths)
        self.step = step
        self.norms = np.asarray(norms)
        super().__init__(f"non-finite state on path(s) {self.paths} at step {step}; "
                         f"last finite L2 norms {self.norms[max(0, step - 3):step + 1].tolist()}")


@dataclass(eq=False)
class Trajectory:
    """States of one path on the lattice, with the addresses of its driving increments."""
    path: int
    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    fingerprint: str
    seed: int
    coarsen: int = 1
    addresses: Dict[str, tuple] = field(default_factory=dict)

    @property
    def M(self):
        return len(self.times) - 1

    @property
    def final(self):
        return self.states[-1]

    def records(self):
        for k, t in enumerate(self.times):
            yield {"path": self.path, "step": k, "time": t, "norm_l2": self.norms[k],
                   "norm_max": float(np.max(np.abs(self.states[k]))), "seed": self.seed,
                   "fingerprint": self.fingerprint}


def initial_condition(settings, grid, seed):
    """u0 from the `initial` catalog: zero, constant, cos_mode or random_smooth."""
    u = settings
    if u.name == "zero":
        return np.zeros(grid.size)
    if u.name == "constant":
        return np.full(grid.size, float(u.value))
    if u.name == "cos_mode":
        return float(u.value) * np.prod(np.cos(u.mode * np.pi * grid.nodes), axis=1)
    if u.name == "random_smooth":
        rng = np.random.Generator(np.random.Philox(counter=[0, 0, 0, INITIAL], key=seed))
        xi = rng.standard_normal(u.modes)
        k = np.arange(u.modes)
        profile = np.cos(np.pi * grid.nodes[:, 0:1] * k[None, :]) @ (xi / (1.0 + k)**2)
        return float(u.value) * profile
    raise NotImplementedError(f"unknown initial condition \"{u.name}\"")


class MildSolver:
    """Steps U_{k+1} = (I - dt A_h(t_{k+1}))^{-1} [U_k + dt F + dt Lambda G + B dW1 + Lambda C dW2].

    Coefficients are evaluated at the left endpoint t_k. Paths are stepped
    together with the path index as the trailing array dimension; each path
    draws its increments from its own counter-addressed stream, so a path
    produces the same numbers in any batch.
    """

    def __init__(self, settings, grid=None):
        self.settings = settings
        self.seed = int(settings.seed)
        self.fingerprint = fingerprint(settings)
        self.grid = grid or make_grid(settings.grid.dimension, settings.grid.n)
        self.lattice = SteppingLattice(float(settings.lattice.T), int(settings.lattice.M))
        self.shift_w = float(settings.shift_w)
        self.absorb_shift = bool(settings.absorb_shift)

        coeffs = make_coefficients(settings.coefficients)
        family = DiscreteOperatorFamily(self.grid, coeffs, shift_w=self.shift_w)
        # with absorb_shift the linear part is A - w and F becomes F + w U
        self.family = family.shifted() if self.absorb_shift else family
        self.family.prepare(self.lattice.times)
        self.boundary_map = BoundaryMap(self.family, settings.boundary_condition, settings.exponents.alpha)

        self.interior_noise = make_noise_model(settings.noise, self.grid, "interior")
        self.boundary_noise = make_noise_model(settings.noise, self.grid, "boundary")
        self.nonlinearities = make_nonlinearities(settings.nonlinearities)
        self.u0 = initial_condition(settings.initial, self.grid, self.seed)

        self.progress_bar_fn = None

    @property
    def has_interior_noise(self):
        return self.interior_noise is not None and not self.interior_noise.is_zero \
            and not self.nonlinearities["B"].is_zero

    @property
    def has_boundary_noise(self):
        return self.boundary_noise is not None and not self.boundary_noise.is_zero \
            and not self.nonlinearities["C"].is_zero

    @property
    def has_drift(self):
        return self.absorb_shift and self.shift_w != 0.0 or not self.nonlinearities["F"].is_zero \
            or not self.nonlinearities["G"].is_zero

    def mean(self, U):
        """Spatial mean <U, 1>, through which G and C read the state."""
        return inner(self.grid, U, np.ones(self.grid.size))

    def boundary_field(self, values):
        """Boundary function that is constant per path."""
        return np.ones(self.grid.boundary_size)[:, None] * np.atleast_1d(values)[None, :] \
            if np.ndim(values) else np.full(self.grid.boundary_size, float(values))

    def interior_drift(self, U):
        f = self.nonlinearities["F"](U)
        if self.absorb_shift:
            f = f + self.shift_w * U
        return f

    def boundary_drift(self, U):
        return self.boundary_field(self.nonlinearities["G"](self.mean(U)))

    def noise_increments(self, paths, coarsen=1):
        """Mode increments (M / coarsen, N_modes, P) per noise target, or None."""
        result = {}
        for name, model, stream in (("interior", self.interior_noise, INTERIOR),
                                    ("boundary", self.boundary_noise, BOUNDARY)):
            if model is None:
                result[name] = None
                continue
            blocks = [IncrementStream(self.seed, p, self.lattice.M, self.lattice.dt, model.n_modes,
                                      stream).increments(coarsen) for p in paths]
            result[name] = np.stack(blocks, axis=2)
        return result

    def forcing(self, t, dt, U, interior_xi=None, boundary_xi=None):
        """Everything added to U_k before the resolvent is applied, or None if it vanishes."""
        total = None
        if self.has_drift:
            total = dt * self.interior_drift(U)
            if not self.nonlinearities["G"].is_zero:
                total = total + dt * self.boundary_map.lambda_apply(t, self.boundary_drift(U))
        if interior_xi is not None and self.has_interior_noise:
            term = self.nonlinearities["B"](U) * self.interior_noise.synthesize(interior_xi)
            total = term if total is None else total + term
        if boundary_xi is not None and self.has_boundary_noise:
            c = self.boundary_field(self.nonlinearities["C"](self.mean(U)))
            term = self.boundary_map.lambda_apply(t, c * self.boundary_noise.synthesize(boundary_xi))
            total = term if total is None else total + term
        return total

    def step(self, U, k, lattice=None, interior_xi=None, boundary_xi=None):
        lattice = lattice or self.lattice
        times = lattice.times
        forcing = self.forcing(times[k], lattice.dt, U, interior_xi, boundary_xi)
        return implicit_update(self.family, times[k + 1], lattice.dt, U, forcing)

    def run_batch(self, paths, coarsen=1, noise=True, keep_states=True):
        """Step the given paths together on the lattice coarsened by ``coarsen``.

        Returns a list of Trajectory, one per path. With keep_states False only
        the initial and final states are kept.
        """
        paths = list(paths)
        P = len(paths)
        lattice = self.lattice.coarsen(coarsen)
        increments = self.noise_increments(paths, coarsen) if noise else {"interior": None, "boundary": None}
        U = np.repeat(self.u0[:, None], P, axis=1)
        norms = np.zeros((lattice.M + 1, P))
        norms[0] = lp_norm(self.grid, U, 2)
        states = np.zeros((lattice.M + 1, self.grid.size, P)) if keep_states else None
        if keep_states:
            states[0] = U

        step_range = range(lattice.M)
        if self.progress_bar_fn is not None:
            step_range = self.progress_bar_fn(step_range)
        with ScopedTimer(f"run_batch({paths[0]}..{paths[-1]}, M={lattice.M})"):
            for k in step_range:
                interior_xi = None if increments["interior"] is None else increments["interior"][k]
                boundary_xi = None if increments["boundary"] is None else increments["boundary"][k]
                U = self.step(U, k, lattice, interior_xi, boundary_xi)
                norms[k + 1] = lp_norm(self.grid, U, 2)
                if config.verify_finite and not np.all(np.isfinite(norms[k + 1])):
                    bad = [p for p, ok in zip(paths, np.isfinite(norms[k + 1])) if not ok]
                    raise PathDivergedError(bad, k + 1, norms[:k + 1, paths.index(bad[0])])
                if keep_states:
                    states[k + 1] = U

        if not keep_states:
            states = np.stack([np.repeat(self.u0[:, None], P, axis=1), U])
        times = lattice.times if keep_states else lattice.times[[0, -1]]
        trajectories = []
        for j, p in enumerate(paths):
            addresses = {}
            if increments["interior"] is not None:
                addresses["interior"] = (self.seed, p, INTERIOR, self.lattice.M, coarsen)
            if increments["boundary"] is not None:
                addresses["boundary"] = (self.seed, p, BOUNDARY, self.lattice.M, coarsen)
            trajectories.append(Trajectory(path=p,
                                           times=times,
                                           states=states[:, :, j],
                                           norms=norms[:, j] if keep_states else norms[[0, -1], j],
                                           fingerprint=self.fingerprint,
                                           seed=self.seed,
                                           coarsen=coarsen,
                                           addresses=addresses))
        return trajectories

    def run_path(self, path_index, coarsen=1):
        return self.run_batch([path_index], coarsen)[0]

    def free_evolution(self, coarsen=1):
        """P_h(t_k, 0) u0 on every lattice time, shape (M + 1, N)."""
        lattice = self.lattice.coarsen(coarsen)
        U = self.u0.copy()
        states = [U]
        for k in range(lattice.M):
            U = implicit_update(self.family, lattice.times[k + 1], lattice.dt, U)
            states.append(U)
        return np.array(states)

    def write_ndjson(self, filename, trajectories):
        write_ndjson(filename, (r for trajectory in trajectories for r in trajectory.records()))

    def write_snapshots(self, folder, trajectory, times=None):
        """One CSV per requested time with the full state of the path."""
        times = self.settings.outputs.snapshots if times is None else times
        lattice = self.lattice.coarsen(trajectory.coarsen)
        filenames = []
        for t in times:
            k = lattice.index(t)
            filename = os.path.join(folder, f"snapshot_path{trajectory.path}_step{k}.csv")
            write_grid_function_csv(filename, self.grid, trajectory.states[k], name="u",
                                    header=[f"seed={self.seed}", f"fingerprint={self.fingerprint}",
                                            f"path={trajectory.path}", f"time={lattice.times[k]!r}"])
            filenames.append(filename)
        return filenames


def run_path(settings, path_index):
    return MildSolver(settings).run_path(path_index)


def ito_isometry_reference(solver):
    """E ||U(T)||^2 for additive noise from the discrete propagator, without sampling.

    ||E U(T)||^2 + sum_k dt sum_n ||P_h(T, t_k) Q_k i h_n||^2, where Q_k is b
    for interior noise and Lambda_h(t_k) c for boundary noise. The sum uses
    the adjoint recursion R_k^T = W (W - dt S_k)^{-1} for P_h(T, t_k)^T.
    """
    nl = solver.nonlinearities
    for target in ("B", "C"):
        if not nl[target].is_constant:
            raise ValueError(f"{target} must be constant (additive noise), got {nl[target].name}")
    for target in ("F", "G"):
        if not nl[target].is_constant:
            raise ValueError(f"{target} must be constant for a deterministic mean, got {nl[target].name}")
    grid, family, lattice = solver.grid, solver.family, solver.lattice
    mean = solver.run_batch([0], noise=False, keep_states=False)[0].final
    columns = []
    if solver.has_interior_noise:
        b = nl["B"](np.zeros(1))[0]
        columns.append(("interior", b * solver.interior_noise.factor))
    if solver.has_boundary_noise:
        c = nl["C"](np.zeros(1))[0]
        columns.append(("boundary", c * solver.boundary_noise.factor))

    W = grid.weights
    Q = np.eye(grid.size)
    variance = 0.0
    times = lattice.times
    for k in range(lattice.M - 1, -1, -1):
        Q = W[:, None] * family.factor(times[k + 1], 1.0, lattice.dt).solve(Q)
        for target, block in columns:
            V = block if target == "interior" else solver.boundary_map.lambda_apply(times[k], block)
            Y = Q.T @ V
            variance += lattice.dt * float(np.sum(W[:, None] * Y * Y))
    return float(inner(grid, mean, mean)) + variance


@dataclass
class LipschitzReport:
    target: str
    ratio: float
    bound: float
    operator_factor: float

    @property
    def passed(self):
        return self.ratio <= self.bound


def lipschitz_audit(solver, target, samples=100, seed=0):
    """Empirical Lipschitz ratio of a smoothed coefficient over random pairs.

    F: ||f(x) - f(y)|| / ||x - y||; B: gamma norm of (w - A)^{-theta_B}((b(x) - b(y)) i h_n);
    G and C: the same with (w - A)^{-theta} Lambda applied to the boundary term.
    The bound is the catalog constant times the norm of the linear factors, times 1.05.
    """
    assert samples >= 100, f"need at least 100 random pairs, got {samples}"
    spec = solver.nonlinearities[target]
    e = solver.settings.exponents
    grid, family, t = solver.grid, solver.family, 0.0
    rng = np.random.Generator(np.random.Philox(key=seed))
    X = rng.standard_normal((grid.size, samples))
    scale = rng.uniform(1e-3, 1.0, samples)
    Y = X + scale[None, :] * rng.standard_normal((grid.size, samples))
    dist = lp_norm(grid, X - Y, 2)

    def smoothed(theta, v):
        return fractional_power_apply(family, t, -theta, v)

    if target == "F":
        diff = spec(X) - spec(Y)
        values = lp_norm(grid, diff, 2)
        factor = 1.0
    elif target == "B":
        model = solver.interior_noise
        if model is None:
            return LipschitzReport(target, 0.0, 0.0, 0.0)
        diff = spec(X) - spec(Y)
        values = np.array([gamma_norm(smoothed(e.theta_B, diff[:, j:j + 1] * model.factor), 2, grid.weights).value
                           for j in range(samples)])
        eigenvalues, _ = family.eigen(t)
        factor = (family.shift_w - eigenvalues[-1])**(-e.theta_B) * math.sqrt(model.sup_weight)
    elif target == "G":
        diff = spec(solver.mean(X)) - spec(solver.mean(Y))
        columns = solver.boundary_map.lambda_apply(t, solver.boundary_field(diff))
        values = lp_norm(grid, smoothed(e.theta_G, columns), 2)
        perimeter = float(np.sum(grid.boundary_weights))
        factor = smoothed_lambda_norm(solver.boundary_map, t, e.theta_G) * math.sqrt(perimeter)
    elif target == "C":
        model = solver.boundary_noise
        if model is None:
            return LipschitzReport(target, 0.0, 0.0, 0.0)
        diff = spec(solver.mean(X)) - spec(solver.mean(Y))
        block = solver.boundary_map.lambda_apply(t, model.factor)
        smoothed_block = smoothed(e.theta_C, block)
        values = np.abs(diff) * gamma_norm(smoothed_block, 2, grid.weights).value
        factor = smoothed_lambda_norm(solver.boundary_map, t, e.theta_C) * math.sqrt(float(np.sum(model.eigenvalues)))
    else:
        raise ValueError(f"unknown target {target}")
    ratio = float(np.max(values / dist))
    report = LipschitzReport(target=target, ratio=ratio, bound=spec.lipschitz * factor * 1.05, operator_factor=factor)
    log(f"Lipschitz audit {target} ({spec.name}): ratio {ratio:.4g}, bound {report.bound:.4g}")
    return report
