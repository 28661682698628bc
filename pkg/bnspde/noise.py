"""Noise models, counter-addressed Wiener increments and admissibility checks."""

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy.special import zeta

from bnspde.settings import as_exponent, violation
from bnspde.utils import fit_power_law, log

INTERIOR, BOUNDARY, ORACLE = 0, 1, 2
STREAM_IDS = {"interior": INTERIOR, "boundary": BOUNDARY, "oracle": ORACLE}


class NoiseModelError(ValueError):
    pass


class NotPositiveSemidefiniteError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Q = sum_n lambda_n e_n (x) e_n on the interior or boundary carrier space.

    Attributes:
        target: "interior" or "boundary"
        kind: "spectral", "white" or "kernel"
        eigenvalues: (N_modes,) non-negative lambda_n
        basis: (carrier size, N_modes) columns e_n, orthonormal in the weighted inner product
        weights: quadrature weights of the carrier nodes
        exponent: integrability exponent r (interior) or s (boundary)
        tail_mass: sum of the truncated eigenvalues beyond N_modes
    """
    target: str
    kind: str
    eigenvalues: np.ndarray
    basis: np.ndarray
    weights: np.ndarray
    exponent: float = 2.0
    tail_mass: float = 0.0

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    @property
    def factor(self):
        """Columns i h_n = sqrt(lambda_n) e_n of the factorization Q = i i*."""
        return self.basis * np.sqrt(self.eigenvalues)[None, :]

    @property
    def is_zero(self):
        return not np.any(self.eigenvalues > 0.0)

    @property
    def sup_weight(self):
        """sum_n lambda_n ||e_n||_inf^2 over the retained modes."""
        return float(np.sum(self.eigenvalues * np.max(np.abs(self.basis), axis=0)**2))

    def gram_deviation(self):
        gram = self.basis.T @ (self.weights[:, None] * self.basis)
        return float(np.max(np.abs(gram - np.eye(self.n_modes))))

    def covariance_matrix(self):
        F = self.factor
        return F @ (F.T * self.weights[None, :])

    def synthesize(self, xi):
        """sum_n sqrt(lambda_n) xi_n e_n for mode increments xi of shape (N_modes,) or (N_modes, P)."""
        return self.factor @ xi

    def increment(self, stream, step, coarsen=1):
        return self.synthesize(stream.increments(coarsen)[step])

    @staticmethod
    def from_covariance(Q, weights, target="interior", max_modes=None, exponent=2.0):
        """Noise whose covariance operator on the weighted carrier space is Q."""
        i = rkhs_factorize(Q, weights)
        if max_modes is not None:
            i = i[:, :max_modes]
        lam = np.sum(weights[:, None] * i * i, axis=0)
        basis = i / np.sqrt(lam)[None, :] if len(lam) else i
        total = float(np.sum(np.diag(Q)))
        return NoiseModel(target=target, kind="kernel", eigenvalues=lam, basis=basis, weights=np.asarray(weights),
                          exponent=exponent, tail_mass=max(0.0, total - float(np.sum(lam))))


@dataclass(eq=False)
class IncrementStream:
    """Standard normal draws addressed by (master_seed, path, stream, step, mode).

    Each (path, stream) pair owns a Philox counter block keyed by the master
    seed, so draws do not depend on which worker produces them or in which
    order paths run. Row k of ``normals`` feeds step k on the finest lattice.
    """
    master_seed: int
    path_index: int
    M: int
    dt: float
    n_modes: int
    stream: int = INTERIOR
    _normals: np.ndarray = field(default=None, repr=False)

    def generator(self):
        bit_generator = np.random.Philox(counter=[0, 0, self.path_index, self.stream], key=self.master_seed)
        return np.random.Generator(bit_generator)

    @property
    def normals(self):
        if self._normals is None:
            self._normals = self.generator().standard_normal((self.M, self.n_modes))
        return self._normals

    def draw(self, step, mode):
        return float(self.normals[step, mode])

    def increments(self, coarsen=1):
        """Mode increments on the lattice with M / coarsen steps."""
        fine = math.sqrt(self.dt) * self.normals
        return couple_to_coarse(fine, self.M, self.M // coarsen) if coarsen != 1 else fine


def couple_to_coarse(increments, M, M_coarse):
    """Sum blocks of fine increments into the increments of a coarser lattice."""
    if M_coarse <= 0 or M % M_coarse != 0:
        raise NoiseModelError(f"fine step count {M} is not divisible by {M_coarse}")
    increments = np.asarray(increments)
    assert increments.shape[0] == M, f"expected {M} fine increments, got {increments.shape[0]}"
    if M == M_coarse:
        return increments
    ratio = M // M_coarse
    return increments.reshape((M_coarse, ratio) + increments.shape[1:]).sum(axis=1)


def wiener_increment(model, stream, step, coarsen=1):
    if model.kind == "white" and model.target != "interior":
        raise NoiseModelError(violation("white", "white noise is only available in the interior"))
    return model.increment(stream, step, coarsen)


@dataclass
class GammaNorm:
    value: float
    exact: bool


def gamma_norm(columns, p=2, weights=None):
    """gamma-radonifying norm of the finite-rank operator with columns R h_n.

    For p = 2 this is the weighted Hilbert-Schmidt norm. For other p the
    square-function norm ||(sum_n |R h_n|^2)^{1/2}||_{L^p} is returned, which is
    equivalent up to p-dependent constants and flagged as such.
    """
    columns = np.asarray(columns, dtype=np.float64)
    if columns.ndim == 1:
        columns = columns[:, None]
    if weights is None:
        weights = np.ones(columns.shape[0])
    if columns.shape[1] == 0:
        return GammaNorm(0.0, p == 2)
    square = np.sum(columns * columns, axis=1)
    if p == 2:
        return GammaNorm(float(math.sqrt(np.sum(weights * square))), True)
    if np.isinf(p):
        return GammaNorm(float(np.sqrt(square.max())), False)
    return GammaNorm(float(np.sum(weights * square**(p / 2.0))**(1.0 / p)), False)


def rkhs_factorize(Q, weights=None, tolerance=1e-8):
    """Factor i with Q = i i^T W, columns ordered by decreasing eigenvalue.

    Q acts on the carrier space with inner product weighted by ``weights`` and
    must be self-adjoint and positive semidefinite there.
    """
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    WQ = weights[:, None] * Q
    scale = max(1.0, float(np.max(np.abs(WQ)))) if n else 1.0
    if np.max(np.abs(WQ - WQ.T), initial=0.0) > 1e-10 * scale:
        raise NotPositiveSemidefiniteError("covariance is not self-adjoint in the weighted inner product")
    d = np.sqrt(weights)
    M = d[:, None] * Q / d[None, :]
    values, U = np.linalg.eigh(0.5 * (M + M.T))
    if n and values.min() < -tolerance * scale:
        raise NotPositiveSemidefiniteError(f"covariance has negative eigenvalue {values.min():.3e}")
    top = values.max(initial=0.0)
    keep = values > max(1e-12 * top, 0.0) if top > 0 else np.zeros(n, dtype=bool)
    order = np.argsort(values[keep])[::-1]
    V = (U[:, keep] / d[:, None])[:, order]
    return V * np.sqrt(values[keep][order])[None, :]


def power_spectrum(amplitude, decay, modes):
    n = np.arange(1, modes + 1, dtype=np.float64)
    eigenvalues = amplitude * n**(-decay)
    tail = amplitude * float(zeta(decay, modes + 1)) if decay > 1.0 else math.inf
    return eigenvalues, tail


def read_spectrum_csv(filename):
    df = pd.read_csv(filename, comment="#", float_precision="round_trip")
    df = df.sort_values("n")
    eigenvalues = df["lambda"].to_numpy(dtype=np.float64)
    if np.any(eigenvalues < 0):
        raise NoiseModelError(f"{filename}: eigenvalues must be non-negative")
    return eigenvalues


def write_spectrum_csv(filename, model):
    pd.DataFrame({"n": np.arange(1, model.n_modes + 1), "lambda": model.eigenvalues}).to_csv(
        filename, index=False, float_format="%.17g")


def interior_basis(grid, modes):
    """Neumann cosine modes, ordered by frequency, orthonormal in the weighted inner product."""
    n = grid.n_per_axis
    if grid.dimension == 1:
        if modes > n:
            raise NoiseModelError(f"at most {n} interior modes on {grid}, requested {modes}")
        k = np.arange(modes)
        scale = np.where(k == 0, 1.0, math.sqrt(2.0))
        return scale[None, :] * np.cos(np.pi * grid.nodes[:, 0:1] * k[None, :])
    pairs = sorted(((j, k) for j in range(n) for k in range(n)), key=lambda jk: (jk[0]**2 + jk[1]**2, jk[0]))
    if modes > len(pairs):
        raise NoiseModelError(f"at most {len(pairs)} interior modes on {grid}, requested {modes}")
    s1, s2 = grid.nodes[:, 0], grid.nodes[:, 1]
    columns = []
    for j, k in pairs[:modes]:
        scale = (1.0 if j == 0 else math.sqrt(2.0)) * (1.0 if k == 0 else math.sqrt(2.0))
        columns.append(scale * np.cos(j * np.pi * s1) * np.cos(k * np.pi * s2))
    return np.stack(columns, axis=1)


def boundary_basis(grid, modes):
    """Orthonormal functions on the boundary: the two endpoint modes in 1D, Fourier in arc length in 2D."""
    if grid.dimension == 1:
        if modes > 2:
            raise NoiseModelError(f"the boundary of the interval carries 2 modes, requested {modes}")
        return (np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0))[:, :modes]
    n = grid.n_per_axis
    if modes > 4 * n - 1:
        raise NoiseModelError(f"at most {4 * n - 1} boundary modes on {grid}, requested {modes}")
    sigma = grid.arclength
    length = 4.0
    columns = [np.full(len(sigma), 1.0 / math.sqrt(length))]
    k = 1
    while len(columns) < modes:
        arg = 2.0 * np.pi * k * sigma / length
        columns.append(np.cos(arg) * math.sqrt(2.0 / length))
        if len(columns) < modes:
            columns.append(np.sin(arg) * math.sqrt(2.0 / length))
        k += 1
    return np.stack(columns, axis=1)


def spectral_model(grid, target, eigenvalues, tail_mass=0.0, exponent=2.0):
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    if np.any(eigenvalues < 0):
        raise NoiseModelError("eigenvalues must be non-negative")
    if target == "interior":
        basis, weights = interior_basis(grid, len(eigenvalues)), grid.weights
    else:
        basis, weights = boundary_basis(grid, len(eigenvalues)), grid.boundary_weights
    return NoiseModel(target=target, kind="spectral", eigenvalues=eigenvalues, basis=basis,
                      weights=np.asarray(weights), exponent=exponent, tail_mass=tail_mass)


def white_model(grid, exponent=2.0):
    """Discrete cylindrical noise: independent N(0, dt / w_i) at every node."""
    if grid.dimension != 1:
        raise NoiseModelError(violation("white", f"white noise requested in dimension {grid.dimension}"))
    weights = np.asarray(grid.weights)
    return NoiseModel(target="interior", kind="white", eigenvalues=np.ones(grid.size),
                      basis=np.diag(1.0 / np.sqrt(weights)), weights=weights, exponent=exponent, tail_mass=math.inf)


def kernel_model(grid, target, amplitude, length_scale, modes, exponent=2.0):
    """Gaussian-kernel covariance, factorized through its reproducing kernel Hilbert space."""
    if target == "interior":
        points, weights = grid.nodes, np.asarray(grid.weights)
    else:
        points, weights = grid.boundary_coordinates, np.asarray(grid.boundary_weights)
    distance = np.sum((points[:, None, :] - points[None, :, :])**2, axis=2)
    Q = amplitude * np.exp(-0.5 * distance / length_scale**2) * weights[None, :]
    return NoiseModel.from_covariance(Q, weights, target=target, max_modes=modes, exponent=exponent)


def make_noise_model(settings, grid, target):
    """Noise model of one target from the `noise` settings section, or None."""
    n = settings[target]
    exponent = as_exponent(n.r if target == "interior" else n.s)
    if n.kind == "none":
        return None
    if n.kind == "white":
        if target != "interior":
            raise NoiseModelError(violation("white", "white noise is only available in the interior"))
        return white_model(grid, exponent)
    if n.kind == "kernel":
        return kernel_model(grid, target, n.amplitude, n.length_scale, int(n.modes), exponent)
    if n.spectrum == "single":
        eigenvalues, tail = np.array([n.amplitude]), 0.0
    elif n.spectrum == "file":
        eigenvalues, tail = read_spectrum_csv(n.filename), 0.0
    else:
        modes = int(n.modes)
        if target == "boundary" and grid.dimension == 1:
            modes = min(modes, 2)
        eigenvalues, tail = power_spectrum(n.amplitude, n.decay, modes)
    model = spectral_model(grid, target, eigenvalues, tail, exponent)
    if model.tail_mass > 0:
        log(f"{target} noise: {model.n_modes} modes retained, truncated tail mass {model.tail_mass:.3e}")
    return model


@dataclass
class ExampleReport:
    regime: str
    violations: List[str]
    details: dict

    @property
    def passed(self):
        return not self.violations


def trace_class_check(eigenvalues, sup_norms):
    """Partial sum of lambda_n ||e_n||_inf^2 and the fitted decay exponent of its terms."""
    terms = np.asarray(eigenvalues) * np.asarray(sup_norms)**2
    partial = float(np.sum(terms))
    n = np.arange(1, len(terms) + 1)
    nonzero = np.count_nonzero(terms)
    if nonzero <= 2:
        return partial, -math.inf, True
    slope, _, _ = fit_power_law(n, terms)
    return partial, float(slope), bool(slope < -1.05)


def validate_example(settings, grid=None):
    """Admissibility of the noise regime named in settings.regime.name."""
    regime = settings.regime.name
    e = settings.exponents
    p = as_exponent(e.p)
    d = settings.grid.dimension
    violations, details = [], {}
    if regime == "trace_class":
        from bnspde.spatial import make_grid
        grid = grid or make_grid(d, settings.grid.n)
        target = "boundary" if settings.noise.boundary.kind != "none" else "interior"
        model = make_noise_model(settings.noise, grid, target)
        if model is None:
            violations.append(violation("trace_class", "no spectral noise model configured"))
        else:
            partial, slope, ok = trace_class_check(model.eigenvalues, np.max(np.abs(model.basis), axis=0))
            details.update(target=target, partial_sum=partial, tail_slope=slope, tail_mass=model.tail_mass)
            if not ok or math.isinf(model.tail_mass):
                violations.append(violation("trace_class", f"terms decay like n^{slope:.3f}"))
    elif regime == "rkhs":
        q = as_exponent(settings.regime.q)
        s = as_exponent(settings.noise.boundary.s)
        details.update(q=q, s=s)
        if not (p < q and p <= s < math.inf and abs(1.0 / p - 1.0 / q - 1.0 / s) <= 1e-12):
            violations.append(violation("rkhs", f"q = {q:g}, s = {s:g}, p = {p:g}"))
    elif regime == "integrable":
        r = as_exponent(settings.noise.interior.r)
        details.update(r=r, interval=(d / (2.0 * r), 0.5))
        if not (d < r < math.inf and d / (2.0 * r) < e.theta_B < 0.5):
            violations.append(violation("integrable", f"theta_B = {e.theta_B}, r = {r:g}, d = {d}"))
    elif regime == "white":
        details.update(interval=(1.0 / (2.0 * p) + 0.25, 0.5))
        if d != 1 or not p > 2:
            violations.append(violation("white", f"d = {d}, p = {p:g}"))
        elif not 1.0 / (2.0 * p) + 0.25 < e.theta_B < 0.5:
            violations.append(violation("white_theta", f"theta_B = {e.theta_B}, p = {p:g}"))
    else:
        raise NoiseModelError(violation("catalog", f"unknown noise regime {regime!r}"))
    return ExampleReport(regime=regime, violations=violations, details=details)
