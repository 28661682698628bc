"""The time-dependent divergence-form operator with conormal boundary condition."""

import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from bnspde.spatial import lp_norm
from bnspde.utils import fit_power_law, log

# w - A_h must keep its spectrum this far (relative) above zero.
SPECTRAL_GAP = 1e-10


class EllipticityError(ValueError):
    pass


class SingularSystemError(RuntimeError):
    pass


class CoefficientType(Enum):
    CONSTANT = "constant"
    OSCILLATING = "oscillating"
    HOLDER = "holder"
    STEP = "step"


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients a(t, s) and a0(t, s) of the elliptic operator.

    Attributes:
        diffusion_fn: (t, points) -> principal coefficient at the points; a
            scalar, an (N,) array (isotropic) or an (N, d) array (diagonal)
        potential_fn: (t, points) -> zeroth-order coefficient, scalar or (N,)
        mu: claimed Hölder exponent of t -> a(t, .), in (1/2, 1]
        kappa: claimed ellipticity lower bound
        autonomous: True if neither coefficient depends on t
    """
    diffusion_fn: Callable
    potential_fn: Callable
    mu: float = 1.0
    kappa: float = 1.0
    autonomous: bool = True
    name: str = "custom"

    def diffusion(self, t, points):
        points = np.atleast_2d(points)
        n, d = points.shape
        a = np.asarray(self.diffusion_fn(t, points), dtype=np.float64)
        if a.ndim == 2:
            assert a.shape == (n, d), f"diffusion must have shape {(n, d)}, got {a.shape}"
            return a
        return np.broadcast_to(a.reshape(-1, 1) if a.ndim == 1 else a, (n, d)).copy()

    def potential(self, t, points):
        points = np.atleast_2d(points)
        a0 = np.asarray(self.potential_fn(t, points), dtype=np.float64)
        return np.broadcast_to(a0, (points.shape[0],)).copy()

    def with_potential_shift(self, shift):
        fn = self.potential_fn
        return replace(self, potential_fn=lambda t, s: np.asarray(fn(t, s)) + shift, name=f"{self.name}{shift:+g}")


def constant_coefficients(a=1.0, a0=0.0):
    return CoefficientField(lambda t, s: a, lambda t, s: a0, mu=1.0, kappa=a, autonomous=True, name="constant")


def make_coefficients(settings):
    """Build a CoefficientField from the `coefficients` settings section."""
    c = settings
    kind = CoefficientType(c.type)
    a, a0, amplitude = float(c.a), float(c.a0), float(c.amplitude)
    if kind == CoefficientType.CONSTANT:
        return constant_coefficients(a, a0)
    if kind == CoefficientType.OSCILLATING:
        frequency = float(c.frequency)

        def diffusion(t, s):
            return a + amplitude * np.sin(2.0 * np.pi * s[:, 0]) * np.cos(2.0 * np.pi * frequency * t)

        return CoefficientField(diffusion, lambda t, s: a0, mu=1.0, kappa=a - abs(amplitude),
                                autonomous=(frequency == 0.0 or amplitude == 0.0), name=kind.value)
    if kind == CoefficientType.HOLDER:
        mu, t0 = float(c.mu), float(c.t0)

        def diffusion(t, s):
            return a + amplitude * abs(t - t0)**mu * 0.5 * (1.0 + np.cos(np.pi * s[:, 0]))

        return CoefficientField(diffusion, lambda t, s: a0, mu=mu, kappa=a - abs(amplitude),
                                autonomous=(amplitude == 0.0), name=kind.value)
    if kind == CoefficientType.STEP:
        t0 = float(c.t0)
        return CoefficientField(lambda t, s: a + (amplitude if t >= t0 else 0.0), lambda t, s: a0,
                                mu=float(c.mu), kappa=min(a, a + amplitude),
                                autonomous=(amplitude == 0.0), name=kind.value)
    raise NotImplementedError(f"coefficient type {kind}")


def _edges(grid):
    """Finite-volume edges as (p, q, axis, midpoint, face factor)."""
    n, m, h = grid.n_per_axis, grid.axis_points, grid.h
    if grid.dimension == 1:
        p = np.arange(n)
        mid = ((p + 0.5) * h)[:, None]
        return p, p + 1, np.zeros(n, dtype=int), mid, np.ones(n)
    ps, qs, axes, mids, faces = [], [], [], [], []
    for j in range(m):
        face = 0.5 if j in (0, n) else 1.0
        for i in range(n):
            ps.append(i + m * j)
            qs.append(i + 1 + m * j)
            axes.append(0)
            mids.append(((i + 0.5) * h, j * h))
            faces.append(face)
    for i in range(m):
        face = 0.5 if i in (0, n) else 1.0
        for j in range(n):
            ps.append(i + m * j)
            qs.append(i + m * (j + 1))
            axes.append(1)
            mids.append((i * h, (j + 0.5) * h))
            faces.append(face)
    return np.array(ps), np.array(qs), np.array(axes), np.array(mids), np.array(faces)


@dataclass(eq=False)
class DiscreteOperatorFamily:
    """A_h(t) = -W^{-1} K(t) + diag(a0(t)) on a grid, with shift w.

    K(t) is the symmetric finite-volume stiffness matrix; the conormal
    condition is natural in the stencil, which is the ghost-node reflection at
    flux level. A_h(t) is self-adjoint in the weighted inner product.
    """
    grid: object
    coeffs: CoefficientField
    shift_w: float = 1.0
    lattice_times: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        assert self.shift_w >= 0.0, "shift_w must be non-negative"
        self._edges = _edges(self.grid)
        p, q = self._edges[0], self._edges[1]
        edges = np.arange(len(p))
        # (D f)_e = f_q - f_p, so K = D^T diag(c) D
        self._incidence = sp.coo_matrix((np.concatenate([-np.ones(len(p)), np.ones(len(p))]),
                                         (np.concatenate([edges, edges]), np.concatenate([p, q]))),
                                        shape=(len(p), self.grid.size)).tocsr()
        self._conductances = {}
        self._assembly = {}
        self._forms = {}
        self._spectral = {}
        self._factors = {}
        self._lock = threading.Lock()

    def _cacheable(self, t):
        return self.coeffs.autonomous or t in self.lattice_times

    def _key(self, t):
        return 0.0 if self.coeffs.autonomous else float(t)

    def prepare(self, times):
        """Register lattice times whose assemblies and factorizations are cached."""
        self.lattice_times = frozenset(float(t) for t in times)

    def conductance(self, t):
        """Edge conductances a(t, midpoint) * face / h; raises if ellipticity fails."""
        key = self._key(t)
        c = self._conductances.get(key)
        if c is not None:
            return c
        p, q, axis, mid, face = self._edges
        a_mid = self.coeffs.diffusion(t, mid)[np.arange(len(p)), axis]
        a_nodes = self.coeffs.diffusion(t, self.grid.nodes).min(axis=1)
        samples = np.concatenate([a_nodes, a_mid])
        positions = np.concatenate([self.grid.nodes, mid])
        threshold = self.coeffs.kappa * (1.0 - 1e-12)
        violated = (samples <= 0.0) | (samples < threshold)
        if np.any(violated):
            idx = int(np.argmax(violated))
            where = tuple(float(x) for x in positions[idx])
            raise EllipticityError(f"ellipticity violated at t = {t}, s = {where}: "
                                   f"a = {samples[idx]}, kappa = {self.coeffs.kappa}")
        c = a_mid * face / self.grid.h
        if self._cacheable(t):
            with self._lock:
                self._conductances[key] = c
        return c

    def assemble(self, t):
        """Returns (K, a0) at time t."""
        key = self._key(t)
        if key in self._assembly:
            return self._assembly[key]
        p, q = self._edges[0], self._edges[1]
        c = self.conductance(t)
        rows = np.concatenate([p, q, p, q])
        cols = np.concatenate([p, q, q, p])
        data = np.concatenate([c, c, -c, -c])
        size = self.grid.size
        K = sp.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()
        K.sum_duplicates()
        K.sort_indices()
        a0 = self.coeffs.potential(t, self.grid.nodes)
        result = (K, a0)
        if self._cacheable(t):
            with self._lock:
                self._assembly[key] = result
        return result

    def flux_action(self, t, f):
        """-K(t) f = -D^T (c * D f), computed edge by edge so that constants give exact zeros."""
        c = self.conductance(t)
        D = self._incidence
        f = np.asarray(f, dtype=np.float64)
        flux = D @ f
        return -(D.T @ (c * flux if f.ndim == 1 else c[:, None] * flux))

    def symmetric_apply(self, t, f):
        """S(t) f in flux form."""
        _, a0 = self.assemble(t)
        f = np.asarray(f, dtype=np.float64)
        w = self.grid.weights if f.ndim == 1 else self.grid.weights[:, None]
        a0 = a0 if f.ndim == 1 else a0[:, None]
        return self.flux_action(t, f) + w * a0 * f

    def apply(self, t, f):
        """A_h(t) f for a vector or a block of column vectors."""
        _, a0 = self.assemble(t)
        f = np.asarray(f, dtype=np.float64)
        w = self.grid.weights if f.ndim == 1 else self.grid.weights[:, None]
        a0 = a0 if f.ndim == 1 else a0[:, None]
        return self.flux_action(t, f) / w + a0 * f

    def symmetric_form(self, t):
        """S(t) = W A_h(t), symmetric in the Euclidean sense."""
        key = self._key(t)
        S = self._forms.get(key)
        if S is not None:
            return S
        K, a0 = self.assemble(t)
        S = (-K + sp.diags(self.grid.weights * a0)).tocsr()
        if self._cacheable(t):
            with self._lock:
                self._forms[key] = S
        return S

    def matrix(self, t):
        K, a0 = self.assemble(t)
        return (sp.diags(-1.0 / self.grid.weights) @ K + sp.diags(a0)).tocsr()

    def eigen(self, t):
        """Eigenvalues (ascending) and W-orthonormal eigenvectors of A_h(t)."""
        key = self._key(t)
        if key in self._spectral:
            return self._spectral[key]
        d = 1.0 / np.sqrt(self.grid.weights)
        S = self.symmetric_form(t).toarray()
        values, U = np.linalg.eigh(d[:, None] * S * d[None, :])
        V = d[:, None] * U
        if values[-1] - self.shift_w > -SPECTRAL_GAP * max(1.0, float(np.abs(values).max())):
            raise EllipticityError(f"spectrum of A_h({t}) - w is not strictly negative: "
                                   f"max eigenvalue {values[-1]}, w = {self.shift_w}")
        result = (values, V)
        if self._cacheable(t):
            with self._lock:
                self._spectral[key] = result
        return result

    def factor(self, t, alpha, beta):
        """Sparse LU of (alpha W - beta S(t)); solves (alpha - beta A_h(t)) x = f via W f."""
        key = (self._key(t), float(alpha), float(beta))
        lu = self._factors.get(key)
        if lu is not None:
            return lu
        W = sp.diags(self.grid.weights)
        system = (alpha * W - beta * self.symmetric_form(t)).tocsc()
        try:
            lu = splu(system)
        except RuntimeError as e:
            raise SingularSystemError(f"singular system for lambda = {alpha / beta} at t = {t}: {e}")
        pivots = np.abs(lu.U.diagonal())
        if pivots.min() < 1e-13 * pivots.max():
            raise SingularSystemError(f"near-singular system for lambda = {alpha / beta} at t = {t} "
                                      f"(pivot ratio {pivots.min() / pivots.max():.3e})")
        if self._cacheable(t):
            with self._lock:
                self._factors[key] = lu
        return lu

    def solve(self, t, alpha, beta, rhs):
        """x with (alpha - beta A_h(t)) x = rhs."""
        rhs = np.asarray(rhs, dtype=np.float64)
        w = self.grid.weights if rhs.ndim == 1 else self.grid.weights[:, None]
        return self.factor(t, alpha, beta).solve(w * rhs)

    def shifted(self):
        """The same family with a0 replaced by a0 - w and no further shift."""
        return DiscreteOperatorFamily(self.grid, self.coeffs.with_potential_shift(-self.shift_w), shift_w=0.0,
                                      lattice_times=self.lattice_times)


def assemble(coeffs, grid, t):
    """The matrix A_h(t) for the given coefficients."""
    return DiscreteOperatorFamily(grid, coeffs).matrix(t)


def resolvent_apply(family, t, lam, rhs):
    return family.solve(t, lam, 1.0, rhs)


def fractional_power_apply(family, t, theta, f):
    """(w - A_h(t))^theta f through the weighted eigenbasis."""
    assert -1.0 <= theta <= 1.0, f"theta must lie in [-1, 1], got {theta}"
    f = np.asarray(f, dtype=np.float64)
    if theta == 0.0:
        return f.copy()
    values, V = family.eigen(t)
    factor = (family.shift_w - values)**theta
    w = family.grid.weights if f.ndim == 1 else family.grid.weights[:, None]
    coefficients = V.T @ (w * f)
    if f.ndim == 1:
        return V @ (factor * coefficients)
    return V @ (factor[:, None] * coefficients)


def fractional_norm(family, t, eta, f, p=2):
    """Discrete X_eta norm ||(w - A_h(t))^eta f||_{L^p}."""
    assert 0.0 <= eta <= 1.0, f"eta must lie in [0, 1], got {eta}"
    if eta == 0.0:
        return lp_norm(family.grid, f, p)
    return lp_norm(family.grid, fractional_power_apply(family, t, eta, f), p)


@dataclass
class AssumptionReport:
    kappa: float
    holder_exponent: float
    holder_constant: float
    ellipticity_ok: bool
    holder_ok: bool

    @property
    def passed(self):
        return self.ellipticity_ok and self.holder_ok


def validate_assumptions(coeffs, time_samples=16, space_samples=16, T=1.0, dimension=1):
    """Audit ellipticity and the time-Hölder claim of a coefficient field at sample points."""
    assert time_samples >= 8 and space_samples >= 8, "need at least 8 samples per axis"
    axis = np.linspace(0.0, 1.0, space_samples + 1)
    if dimension == 1:
        points = axis[:, None]
    else:
        s1, s2 = np.meshgrid(axis, axis)
        points = np.stack([s1.ravel(), s2.ravel()], axis=1)

    levels = max(3, int(math.ceil(math.log2(time_samples))))
    times = np.linspace(0.0, T, 2**levels + 1)
    fields = np.array([coeffs.diffusion(t, points) for t in times])
    kappa = float(fields.min())
    ellipticity_ok = kappa > 0.0 and kappa >= coeffs.kappa * (1.0 - 1e-12)

    lags, increments = [], []
    for j in range(1, levels + 1):
        step = 2**(levels - j)
        diff = np.abs(fields[step:] - fields[:-step]).reshape(len(times) - step, -1).max(axis=1)
        lags.append(T * 2.0**(-j))
        increments.append(diff.max())
    increments = np.array(increments)
    if np.all(increments == 0.0):
        exponent, constant = 1.0, 0.0
    elif np.count_nonzero(increments) < 2:
        exponent, constant = 0.0, float(increments.max())
    else:
        exponent, intercept, _ = fit_power_law(lags, increments)
        constant = math.exp(intercept)
    holder_ok = exponent >= coeffs.mu - 0.1
    report = AssumptionReport(kappa=kappa,
                              holder_exponent=float(exponent),
                              holder_constant=float(constant),
                              ellipticity_ok=bool(ellipticity_ok),
                              holder_ok=bool(holder_ok))
    log(f"Coefficient audit ({coeffs.name}): kappa = {kappa:.6g}, Hölder exponent = {exponent:.3f} "
        f"(claimed {coeffs.mu}), {'pass' if report.passed else 'FAIL'}")
    return report


def resolvent_bound_probe(family, lambdas, times):
    """Fit K in ||(lambda - A_h(t))^{-1}|| <= K / (1 + |lambda - w|) over the samples."""
    ratios = []
    for t in times:
        values, _ = family.eigen(t)
        for lam in lambdas:
            norm = 1.0 / np.min(np.abs(lam - values))
            ratios.append(norm * (1.0 + abs(lam - family.shift_w)))
    ratios = np.array(ratios)
    return float(ratios.max()), ratios


def write_triplets(filename, matrix):
    coo = sp.coo_matrix(matrix)
    pd.DataFrame({"row": coo.row, "col": coo.col, "value": coo.data}).to_csv(
        filename, index=False, sep=" ", float_format="%.17g")
