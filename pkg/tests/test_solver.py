import json
import os

import numpy as np
import pytest

from bnspde import config
from bnspde.evolution import propagate
from bnspde.solver import MildSolver, PathDivergedError, initial_condition, ito_isometry_reference, \
    lipschitz_audit, run_path
from bnspde.spatial import inner, lp_norm, make_grid, read_grid_function_csv

from conftest import make_settings


def sample_second_moment(solver, paths):
    finals = np.stack([t.final for t in solver.run_batch(range(paths), keep_states=False)], axis=1)
    return float(np.mean(np.sum(solver.grid.weights[:, None] * finals * finals, axis=0)))


def test_zero_configuration_stays_zero(settings):
    trajectory = run_path(settings, 0)
    assert trajectory.states.shape == (settings.lattice.M + 1, settings.grid.n + 1)
    assert not np.any(trajectory.states)
    assert trajectory.fingerprint == MildSolver(settings).fingerprint


def test_noise_free_run_equals_propagation(deterministic_settings):
    solver = MildSolver(deterministic_settings)
    trajectory = solver.run_path(0)
    expected = propagate(solver.family, solver.lattice, 0, solver.lattice.M, solver.u0[:, None])[:, 0]
    np.testing.assert_array_equal(trajectory.final, expected)
    np.testing.assert_array_equal(trajectory.states[0], solver.u0)


def test_runs_are_reproducible(boundary_noise_settings):
    a = MildSolver(boundary_noise_settings).run_batch(range(4))
    b = MildSolver(boundary_noise_settings).run_batch(range(4))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
    assert not np.array_equal(a[0].states, a[1].states)
    assert a[2].addresses["boundary"][:3] == (42, 2, 1)


def test_paths_do_not_depend_on_their_batch(boundary_noise_settings):
    solver = MildSolver(boundary_noise_settings)
    together = solver.run_batch([3, 5, 7])
    alone = solver.run_batch([5])
    np.testing.assert_allclose(together[1].states, alone[0].states, rtol=0, atol=1e-13)


def test_seed_changes_the_noise(boundary_noise_settings):
    other = make_settings(boundary_noise_settings, seed=7)
    a = MildSolver(boundary_noise_settings).run_path(0)
    b = MildSolver(other).run_path(0)
    assert not np.allclose(a.final, b.final)


def test_steady_state_of_constant_forcing():
    s = make_settings({"coefficients.a0": -1.0, "lattice.T": 20.0, "lattice.M": 400, "grid.n": 16,
                       "nonlinearities.F": {"name": "constant", "params": [2.0]}})
    trajectory = MildSolver(s).run_path(0)
    np.testing.assert_allclose(trajectory.final, 2.0, atol=1e-6)


def test_matches_dense_backward_euler():
    s = make_settings({"grid.n": 32, "lattice.T": 0.5, "lattice.M": 256, "initial.name": "random_smooth",
                       "coefficients.type": "oscillating", "coefficients.amplitude": 0.4,
                       "nonlinearities.F": {"name": "affine", "params": [0.5, -0.3]}})
    solver = MildSolver(s)
    trajectory = solver.run_path(0)
    U = solver.u0.copy()
    dt = solver.lattice.dt
    identity = np.eye(solver.grid.size)
    for k in range(solver.lattice.M):
        A = solver.family.matrix(solver.lattice.times[k + 1]).toarray()
        U = np.linalg.solve(identity - dt * A, U + dt * (0.5 - 0.3 * U))
    np.testing.assert_allclose(trajectory.final, U, rtol=0, atol=1e-10)


def test_heat_norms_are_monotone(deterministic_settings):
    norms = MildSolver(deterministic_settings).run_path(0).norms
    assert np.all(np.diff(norms) <= 1e-15)


def test_additive_noise_superposition():
    base = {"grid.n": 16, "lattice.T": 0.25, "lattice.M": 32,
            "noise.interior.kind": "spectral", "noise.interior.modes": 8,
            "noise.boundary.kind": "spectral", "noise.boundary.spectrum": "single",
            "nonlinearities.B": {"name": "constant", "params": [0.5]},
            "nonlinearities.C": {"name": "constant", "params": [1.0]}}
    full = MildSolver(make_settings(base, **{"initial.name": "cos_mode"}))
    noise_only = MildSolver(make_settings(base))
    drift_only = full.run_batch([2], noise=False)[0]
    np.testing.assert_allclose(full.run_path(2).states, drift_only.states + noise_only.run_path(2).states,
                               rtol=0, atol=1e-10)


@pytest.mark.parametrize("values", [
    {"noise.boundary.kind": "spectral", "noise.boundary.spectrum": "single",
     "nonlinearities.C": {"name": "constant", "params": [1.0]}},
    {"noise.interior.kind": "spectral", "noise.interior.modes": 4,
     "nonlinearities.B": {"name": "constant", "params": [1.0]}},
])
def test_ito_isometry(values):
    s = make_settings({"grid.n": 16, "lattice.T": 0.25, "lattice.M": 32, **values})
    solver = MildSolver(s)
    reference = ito_isometry_reference(solver)
    assert reference > 0.0
    assert abs(sample_second_moment(solver, 10000) - reference) <= 0.05 * reference


def test_ito_isometry_requires_additive_noise(boundary_noise_settings):
    s = make_settings(boundary_noise_settings, **{"nonlinearities.C": {"name": "sin", "params": [1.0]}})
    with pytest.raises(ValueError):
        ito_isometry_reference(MildSolver(s))


@pytest.mark.parametrize("F, limit", [({"name": "zero", "params": []}, 0.0),
                                      ({"name": "affine", "params": [0.3, 1.0]}, 1.0 + 1e-6),
                                      ({"name": "tanh", "params": [2.0]}, 2.1)])
def test_lipschitz_audit_of_interior_drift(F, limit):
    report = lipschitz_audit(MildSolver(make_settings({"nonlinearities.F": F})), "F")
    assert report.ratio <= limit
    assert report.passed


def test_lipschitz_audit_of_boundary_terms():
    s = make_settings({"grid.n": 16, "lattice.M": 32, "noise.boundary.kind": "spectral",
                       "noise.boundary.spectrum": "single", "noise.interior.kind": "spectral",
                       "noise.interior.modes": 8,
                       "nonlinearities.G": {"name": "tanh", "params": [1.0]},
                       "nonlinearities.C": {"name": "sin", "params": [2.0]},
                       "nonlinearities.B": {"name": "affine", "params": [0.0, 1.5]}})
    solver = MildSolver(s)
    for target in ("G", "C", "B"):
        report = lipschitz_audit(solver, target)
        assert report.ratio > 0.0
        assert report.passed, target
    with pytest.raises(AssertionError):
        lipschitz_audit(solver, "F", samples=10)


def test_divergence_is_reported():
    s = make_settings({"grid.n": 8, "lattice.M": 16, "initial.name": "constant",
                       "nonlinearities.F": {"name": "affine", "params": [0.0, 1e300]}})
    assert config.verify_finite
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(PathDivergedError) as info:
            MildSolver(s).run_batch([0, 1])
    assert info.value.paths == [0, 1]
    assert info.value.step <= 3


def test_initial_conditions(settings):
    grid = make_grid(1, 32)
    u = settings.initial
    assert not np.any(initial_condition(u, grid, 0))
    u = make_settings({"initial.name": "cos_mode", "initial.mode": 2}).initial
    np.testing.assert_allclose(initial_condition(u, grid, 0), np.cos(2.0 * np.pi * grid.nodes[:, 0]))
    u = make_settings({"initial.name": "random_smooth"}).initial
    np.testing.assert_array_equal(initial_condition(u, grid, 5), initial_condition(u, grid, 5))
    assert not np.array_equal(initial_condition(u, grid, 5), initial_condition(u, grid, 6))


def test_absorbed_shift_gives_the_same_solution(deterministic_settings):
    s = make_settings(deterministic_settings, absorb_shift=True,
                      **{"nonlinearities.F": {"name": "tanh", "params": [1.0]}})
    absorbed = MildSolver(s).run_path(0)
    plain = MildSolver(make_settings(s, absorb_shift=False)).run_path(0)
    grid = make_grid(1, 32)
    assert lp_norm(grid, absorbed.final - plain.final, 2) <= 0.05 * lp_norm(grid, plain.final, 2)


def test_ndjson_records(tmp_path, boundary_noise_settings):
    solver = MildSolver(boundary_noise_settings)
    trajectories = solver.run_batch(range(2))
    filename = str(tmp_path / "trajectories.ndjson")
    solver.write_ndjson(filename, trajectories)
    with open(filename) as f:
        records = [json.loads(line) for line in f]
    assert len(records) == 2 * (solver.lattice.M + 1)
    assert records[0]["path"] == 0 and records[-1]["path"] == 1
    assert records[-1]["norm_l2"] == trajectories[1].norms[-1]
    assert records[0]["fingerprint"] == solver.fingerprint


def test_snapshots(tmp_path, boundary_noise_settings):
    solver = MildSolver(boundary_noise_settings)
    trajectory = solver.run_path(1)
    filenames = solver.write_snapshots(str(tmp_path), trajectory, [0.0, solver.lattice.T])
    assert [os.path.basename(f) for f in filenames] == ["snapshot_path1_step0.csv", "snapshot_path1_step32.csv"]
    np.testing.assert_array_equal(read_grid_function_csv(filenames[1], solver.grid, "u"), trajectory.final)
    with open(filenames[1]) as f:
        assert f.readline().startswith("# seed=42")


def test_mass_balance_of_boundary_forcing(boundary_noise_settings):
    solver = MildSolver(boundary_noise_settings)
    trajectory = solver.run_path(0)
    increments = solver.noise_increments([0])["boundary"][:, :, 0]
    flux = solver.boundary_noise.synthesize(increments.T)
    total = float(np.sum(solver.grid.boundary_weights[:, None] * flux))
    ones = np.ones(solver.grid.size)
    assert inner(solver.grid, trajectory.final, ones) == pytest.approx(total, abs=1e-12)
