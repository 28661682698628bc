"""Hölder exponents, Monte Carlo aggregation, convergence studies and oracle checks."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from bnspde.boundary import BoundaryMap, trace_adjoint_residual
from bnspde.elliptic import DiscreteOperatorFamily, constant_coefficients, fractional_norm
from bnspde.evolution import SteppingLattice, propagate
from bnspde.noise import ORACLE, IncrementStream
from bnspde.settings import as_exponent, exponent_cap, override
from bnspde.solver import MildSolver
from bnspde.spatial import lp_norm, make_grid
from bnspde.utils import ScopedTimer, fit_power_law, log, progress_bar, warn
from bnspde.variational import cosine_profile, make_test_function, variational_residual

MIN_LAG_LEVEL = 2
CONSTANT_TOLERANCE = 1e-13


class DiagnosticsError(ValueError):
    pass


@dataclass
class HolderEstimate:
    """Dyadic log-log fit of path increments against the lag.

    Attributes:
        exponent: fitted exponent, clipped to [0, 1.5]; NaN when flagged
        intercept: log of the fitted constant
        r2: coefficient of determination of the fit
        window: (j_min, j_max), lags 2^j steps
        norm: name of the norm applied to increments
        flagged: set when the exponent is undefined (constant path)
    """
    exponent: float
    intercept: float
    r2: float
    window: tuple
    norm: str
    flagged: bool = False
    reason: str = ""


def holder_exponent(values, T=1.0, norm=None, statistic="mean", norm_name=None):
    """Estimate the Hölder exponent of a path sampled on a uniform lattice.

    values has shape (M + 1,) for a scalar path or (M + 1, N) for a path of
    grid functions, in which case ``norm`` maps a (K, N) block of increments
    to K norms. For each lag of 2^j steps, j from 2 to log2(M / 4), the
    increments over the path are reduced by their mean (or by their maximum
    with statistic "sup").
    """
    assert statistic in ("mean", "sup"), f"unknown statistic {statistic}"
    values = np.asarray(values, dtype=np.float64)
    M = len(values) - 1
    if M < 64:
        raise DiagnosticsError(f"Hölder estimation needs M >= 64 steps, got {M}")
    if norm is None:
        norm_name = norm_name or "abs"
        norm = (lambda d: np.abs(d)) if values.ndim == 1 else (lambda d: np.sqrt(np.sum(d * d, axis=1)))
    j_max = int(math.floor(math.log2(M / 4)))
    window = (MIN_LAG_LEVEL, j_max)
    dt = T / M
    lags, stats = [], []
    for j in range(MIN_LAG_LEVEL, j_max + 1):
        lag = 2**j
        increments = norm(values[lag:] - values[:-lag])
        lags.append(lag * dt)
        stats.append(float(np.mean(increments) if statistic == "mean" else np.max(increments)))
    scale = max(1.0, float(np.max(np.abs(values))))
    if max(stats) <= CONSTANT_TOLERANCE * scale:
        return HolderEstimate(math.nan, math.nan, math.nan, window, norm_name, True, "constant path")
    slope, intercept, r2 = fit_power_law(lags, stats)
    if math.isnan(slope):
        return HolderEstimate(math.nan, math.nan, math.nan, window, norm_name, True, "too few nonzero increments")
    return HolderEstimate(float(np.clip(slope, 0.0, 1.5)), float(intercept), float(r2), window, norm_name)


def median_exponent(estimates):
    exponents = [e.exponent for e in estimates if not e.flagged]
    return float(np.median(exponents)) if exponents else math.nan


def ou_paths(seed, paths, M, T=1.0):
    """Exact Ornstein-Uhlenbeck paths dU = -U dt + dW, U(0) = 0, shape (M + 1, P)."""
    dt = T / M
    rho = math.exp(-dt)
    sigma = math.sqrt((1.0 - rho * rho) / 2.0)
    xi = np.stack([IncrementStream(seed, p, M, dt, 1, ORACLE).normals[:, 0] for p in paths], axis=1)
    xi = np.concatenate([xi, np.zeros((1, len(paths)))])
    return lfilter([0.0, sigma], [1.0, -rho], xi, axis=0)


def batches(paths, batch_size):
    """Canonical fixed-size batches; the partition does not depend on the worker count."""
    paths = list(paths)
    return [paths[i:i + batch_size] for i in range(0, len(paths), batch_size)]


def monte_carlo(solver, fn, paths=None, workers=None, batch_size=None, desc=None):
    """Apply fn(solver, batch) to every canonical batch and concatenate the results in path order."""
    settings = solver.settings
    paths = range(int(settings.paths)) if paths is None else paths
    workers = int(settings.workers) if workers is None else workers
    batch_size = int(settings.batch_size) if batch_size is None else batch_size
    jobs = batches(paths, batch_size)
    desc = desc or settings.name
    with ScopedTimer(f"monte_carlo({desc}, {len(jobs)} batches)"):
        if workers <= 1:
            results = [fn(solver, job) for job in progress_bar(jobs, desc=desc)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(progress_bar(executor.map(lambda job: fn(solver, job), jobs), desc=desc,
                                            total=len(jobs)))
    return [item for result in results for item in result]


@dataclass
class ConvergenceReport:
    rate: float
    dts: List[float]
    errors: List[float]
    paths: int
    r2: float = math.nan


def strong_convergence_study(settings, levels=None, paths=None, workers=None):
    """Strong rate from E||U_l(T) - U_{l+1}(T)|| on coupled dyadic levels of the time step."""
    levels = int(settings.study.levels if levels is None else levels)
    paths = int(settings.paths if paths is None else paths)
    if paths < 32:
        raise DiagnosticsError(f"strong convergence needs at least 32 paths, got {paths}")
    if levels < 3:
        raise DiagnosticsError(f"strong convergence needs at least 3 levels, got {levels}")
    solver = MildSolver(settings)
    if solver.lattice.M % 2**(levels - 1) != 0:
        raise DiagnosticsError(f"M = {solver.lattice.M} cannot be coarsened {levels - 1} times")

    def differences(solver, batch):
        finals = [np.stack([t.final for t in solver.run_batch(batch, 2**j, keep_states=False)], axis=1)
                  for j in range(levels)]
        diffs = np.array([lp_norm(solver.grid, finals[j] - finals[j + 1], 2) for j in range(levels - 1)])
        return list(diffs.T)

    per_path = np.array(monte_carlo(solver, differences, range(paths), workers, desc="convergence"))
    errors = per_path.mean(axis=0)
    dts = [solver.lattice.dt * 2**j for j in range(levels - 1)]
    rate, _, r2 = fit_power_law(dts, errors)
    report = ConvergenceReport(rate=float(rate), dts=dts, errors=errors.tolist(), paths=paths, r2=float(r2))
    log(f"Strong convergence: rate {report.rate:.3f} over {levels} levels, {paths} paths")
    return report


def lq_finiteness(grid, states, q):
    """max over the lattice of ||u(t_k)||_{L^q}."""
    return float(np.max(lp_norm(grid, np.asarray(states).T, q)))


def regularity_caps(solver):
    """Configured and sharp exponent caps of the active terms, keyed by term.

    The configured cap of a term is 1 - theta_G or 1/2 - theta; the sharp
    cap uses the infimum of the admissible range of that theta.
    """
    settings = solver.settings
    e = settings.exponents
    p = as_exponent(e.p)
    d = settings.grid.dimension
    caps = {}
    if not solver.nonlinearities["G"].is_zero:
        caps["G"] = (1.0 - e.theta_G, 0.5 + 1.0 / (2.0 * p))
    if solver.has_interior_noise:
        regime = settings.regime.name
        if regime == "integrable":
            theta_inf = d / (2.0 * as_exponent(settings.noise.interior.r))
        elif regime == "white" or solver.interior_noise.kind == "white":
            theta_inf = 1.0 / (2.0 * p) + 0.25
        else:
            theta_inf = 0.0
        caps["B"] = (0.5 - e.theta_B, 0.5 - theta_inf)
    if solver.has_boundary_noise:
        caps["C"] = (0.5 - e.theta_C, 1.0 / (2.0 * p))
    if not caps:
        caps["F"] = (1.0, 1.0)
    return caps


@dataclass
class RegularityReport:
    cap: float
    admissible_cap: float
    sharp_cap: float
    binding: str
    median: float
    lower: Optional[float]
    upper: float
    lq_max: float
    flagged: bool
    estimates: List[HolderEstimate] = field(default_factory=list, repr=False)

    @property
    def lq_finite(self):
        return math.isfinite(self.lq_max)

    @property
    def passed(self):
        if self.flagged:
            return self.lq_finite
        ok = self.median <= self.upper
        if self.lower is not None:
            ok = ok and self.median >= self.lower
        return bool(ok and self.lq_finite)


def state_norm(solver, eta, p):
    """Norm of X~_eta increments, (K, N) block -> K values."""
    if eta == 0.0:
        return lambda d: lp_norm(solver.grid, d.T, p)
    return lambda d: fractional_norm(solver.family, 0.0, eta, d.T, p)


def regularity_band_check(settings, paths=None, workers=None):
    """Median Hölder exponent of u - P(., 0) u0 against the exponent caps."""
    solver = MildSolver(settings)
    if solver.lattice.M < 64:
        raise DiagnosticsError(f"regularity estimation needs M >= 64, got {solver.lattice.M}")
    e = settings.exponents
    p, q = as_exponent(e.p), as_exponent(e.q)
    delta = float(e.delta)
    caps = regularity_caps(solver)
    binding = min(caps, key=lambda term: caps[term][0])
    cap = caps[binding][0]
    sharp = min(c[1] for c in caps.values())
    lower = cap - delta - 0.15 if binding in ("B", "C") else None
    upper = sharp - delta + 0.10
    free = solver.free_evolution() if settings.study.subtract_initial else 0.0
    norm = state_norm(solver, delta, p)
    norm_name = f"X~_{delta:g} (L^{p:g})"

    def estimate(solver, batch):
        results = []
        for trajectory in solver.run_batch(batch):
            fit = holder_exponent(trajectory.states - free, solver.lattice.T, norm, settings.study.statistic,
                                  norm_name)
            results.append((fit, lq_finiteness(solver.grid, trajectory.states, q)))
        return results

    paths = int(settings.paths if paths is None else paths)
    results = monte_carlo(solver, estimate, range(paths), workers, desc="regularity")
    estimates = [r[0] for r in results]
    flagged = all(est.flagged for est in estimates)
    report = RegularityReport(cap=cap,
                              admissible_cap=exponent_cap(e),
                              sharp_cap=sharp,
                              binding=binding,
                              median=median_exponent(estimates),
                              lower=lower,
                              upper=upper,
                              lq_max=max(r[1] for r in results),
                              flagged=flagged,
                              estimates=estimates)
    if flagged:
        warn("regularity band: every path is a constant path, no exponent estimated")
    log(f"Regularity band: median exponent {report.median:.3f}, cap {cap:g} ({binding}), "
        f"sharp cap {sharp:g}, {'pass' if report.passed else 'FAIL'}")
    return report


@dataclass
class OracleReport:
    spatial: List[tuple]
    spatial_order: float
    temporal: List[tuple]
    temporal_order: float

    @property
    def passed(self):
        return self.spatial_order >= 1.9 and self.temporal_order >= 0.9


def heat_oracle_study(grid_sizes=(64, 128, 256), step_counts=(256, 512, 1024), T=0.1, spatial_steps=4096,
                      temporal_n=512):
    """Orders of the 1D heat equation with u0 = cos(pi s) against separated-variable solutions.

    Spatial errors use the time-semidiscrete solution (1 + pi^2 dt)^{-M} cos(pi s)
    so that the time error cancels; temporal errors use e^{-pi^2 T} cos(pi s).
    """
    coeffs = constant_coefficients(1.0, 0.0)

    def solve(n, M):
        grid = make_grid(1, n)
        family = DiscreteOperatorFamily(grid, coeffs)
        lattice = SteppingLattice(T, M)
        u0 = np.cos(np.pi * grid.nodes[:, 0])
        return u0, propagate(family, lattice, 0, M, u0), lattice.dt

    spatial = []
    for n in grid_sizes:
        u0, u, dt = solve(n, spatial_steps)
        exact = (1.0 + np.pi**2 * dt)**(-spatial_steps) * u0
        spatial.append((1.0 / n, float(np.max(np.abs(u - exact)))))
    temporal = []
    for M in step_counts:
        u0, u, dt = solve(temporal_n, M)
        exact = math.exp(-np.pi**2 * T) * u0
        temporal.append((dt, float(np.max(np.abs(u - exact)))))
    spatial_order, _, _ = fit_power_law(*zip(*spatial))
    temporal_order, _, _ = fit_power_law(*zip(*temporal))
    report = OracleReport(spatial, float(spatial_order), temporal, float(temporal_order))
    log(f"Heat oracle: spatial order {report.spatial_order:.3f}, temporal order {report.temporal_order:.3f}")
    return report


def neumann_oracle_study(grid_sizes=(64, 128, 256)):
    """Order of N_h against cosh(s), the solution of x'' - x = 0 with flux data (0, sinh 1)."""
    rows = []
    for n in grid_sizes:
        grid = make_grid(1, n)
        boundary_map = BoundaryMap(DiscreteOperatorFamily(grid, constant_coefficients(1.0, 0.0), shift_w=1.0))
        x = boundary_map.neumann_solve(0.0, np.array([0.0, math.sinh(1.0)]))
        rows.append((1.0 / n, float(np.max(np.abs(x - np.cosh(grid.nodes[:, 0]))))))
    order, _, _ = fit_power_law(*zip(*rows))
    return rows, float(order)


def trace_adjoint_study(grid_sizes=(64, 128, 256), dimension=1, mode=1):
    """Residuals of <Lambda_h y, phi> = <y, tr phi> for phi = cos(mode pi s) and fixed boundary data.

    Returns (rows, order, passed); the order is NaN when every residual is at round-off level.
    """
    rows = []
    for n in grid_sizes:
        grid = make_grid(dimension, n)
        boundary_map = BoundaryMap(DiscreteOperatorFamily(grid, constant_coefficients(1.0, 0.0)))
        if dimension == 1:
            y = np.array([1.0, -0.5])
        else:
            sigma = grid.arclength * np.pi / 2.0
            y = np.cos(sigma) + 0.3 * np.sin(2.0 * sigma)
        phi, flux = cosine_profile(grid, mode)
        rows.append((1.0 / n, trace_adjoint_residual(boundary_map, 0.0, y, phi, flux)))
    residuals = [r for _, r in rows]
    roundoff = max(residuals) <= 1e-10
    order = math.nan if roundoff else float(fit_power_law(*zip(*rows))[0])
    passed = residuals[-1] <= 1e-2 and (roundoff or order >= 0.9)
    return rows, order, passed


@dataclass
class VariationalReport:
    rows: List[tuple]
    order: float
    threshold: float
    pairing_gap: float

    @property
    def passed(self):
        return self.order >= self.threshold


def variational_study(settings, paths=8, refinements=None):
    """Variational residual under refinement.

    Without noise the time step is halved at fixed h; with noise the time step
    and h are halved together, the driving increments being coupled through
    the finest lattice.
    """
    refinements = int(settings.study.refinements if refinements is None else refinements)
    deterministic = settings.noise.interior.kind == "none" and settings.noise.boundary.kind == "none"
    paths = 1 if deterministic else paths
    M_fine = int(settings.lattice.M) * 2**refinements
    rows, gaps = [], []
    for j in range(refinements + 1):
        n = int(settings.grid.n) * (1 if deterministic else 2**j)
        solver = MildSolver(override(settings, {"grid.n": n, "lattice.M": M_fine}))
        phi = make_test_function(settings.study.test_function, solver, settings.study.test_mode)
        coarsen = 2**(refinements - j)
        for trajectory in solver.run_batch(range(paths), coarsen):
            residual = variational_residual(solver, trajectory, phi, "lambda")
            gaps.append(abs(residual - variational_residual(solver, trajectory, phi, "trace")))
            rows.append((trajectory.path, phi.name, solver.lattice.dt * coarsen, solver.grid.h, residual))
    table = pd.DataFrame(rows, columns=["path", "phi", "dt", "h", "residual"])
    mean = table.groupby("dt", sort=True)["residual"].mean()
    order, _, _ = fit_power_law(mean.index.to_numpy(), mean.to_numpy())
    report = VariationalReport(rows=rows, order=float(order), threshold=0.9 if deterministic else 0.4,
                               pairing_gap=float(max(gaps)))
    log(f"Variational residual: order {report.order:.3f} (threshold {report.threshold}), "
        f"pairing gap {report.pairing_gap:.3e}")
    return report


def format_table(rows, columns):
    """Plain-text summary table with 17 significant digits."""
    return pd.DataFrame(rows, columns=columns).to_string(index=False, float_format=lambda x: format(x, ".17g"))
