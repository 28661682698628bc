"""Deterministic propagation P_h(t, s) on a stepping lattice and smoothing probes."""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from bnspde.elliptic import fractional_norm
from bnspde.utils import fit_power_law, log


@dataclass(frozen=True)
class SteppingLattice:
    """Uniform time lattice t_k = k T / M with drift-implicit steps."""
    T: float
    M: int

    def __post_init__(self):
        if not self.T > 0 or self.M < 2:
            raise ValueError(f"lattice needs T > 0 and M >= 2, got T = {self.T}, M = {self.M}")

    @property
    def dt(self):
        return self.T / self.M

    @property
    def times(self):
        # T * k / M, so that coarse lattice times coincide with fine ones
        return self.T * np.arange(self.M + 1, dtype=np.float64) / self.M

    def time(self, k):
        return self.T * k / self.M

    def coarsen(self, factor):
        assert self.M % factor == 0, f"{self.M} steps cannot be coarsened by {factor}"
        return SteppingLattice(self.T, self.M // factor)

    def index(self, t):
        """Nearest lattice index of time t."""
        return int(min(self.M, max(0, round(t / self.dt))))


def implicit_update(family, t_next, dt, U, forcing=None):
    """U + (I - dt A_h(t_next))^{-1} (dt A_h(t_next) U + forcing).

    Equal to (I - dt A_h(t_next))^{-1} (U + forcing). Written as an increment
    so that vectors in the kernel of A_h are reproduced exactly.
    """
    rhs = dt * family.symmetric_apply(t_next, U)
    if forcing is not None:
        w = family.grid.weights if U.ndim == 1 else family.grid.weights[:, None]
        rhs = rhs + w * forcing
    return U + family.factor(t_next, 1.0, dt).solve(rhs)


def propagate(family, lattice, s_index, t_index, x):
    """P_h(t, s) x for lattice indices s <= t; x may hold one column per initial datum."""
    assert 0 <= s_index <= t_index <= lattice.M, f"need 0 <= s <= t <= M, got ({s_index}, {t_index})"
    U = np.array(x, dtype=np.float64)
    times = lattice.times
    for k in range(s_index, t_index):
        U = implicit_update(family, times[k + 1], lattice.dt, U)
    return U


@dataclass
class SmoothingReport:
    alpha: float
    beta: float
    slope: float
    constant: float
    worst_ratio: float
    r2: float
    lags: List[float] = field(default_factory=list)
    ratios: List[float] = field(default_factory=list)


def smoothing_probe(family, lattice, alpha, beta, samples=16, seed=0, min_lag=4):
    """Fit C in ||P(t,s) x||_alpha <= C (t-s)^{beta-alpha} ||x||_beta.

    The sample set holds the eigenvectors of A_h(s) and ``samples`` random
    vectors; for each dyadic lag the worst ratio over the set is recorded.
    """
    assert 0.0 <= beta <= alpha <= 1.0, f"need 0 <= beta <= alpha <= 1, got ({alpha}, {beta})"
    rng = np.random.Generator(np.random.Philox(key=seed))
    starts = [0] if family.coeffs.autonomous else [0, lattice.M // 4, lattice.M // 2]
    times = lattice.times
    lags, ratios = [], []
    worst = {}
    for s in starts:
        _, V = family.eigen(times[s])
        X = np.concatenate([V, rng.standard_normal((family.grid.size, samples))], axis=1)
        base = fractional_norm(family, times[s], beta, X)
        U, k = X, s
        lag = min_lag
        while s + lag <= lattice.M:
            U = propagate(family, lattice, k, s + lag, U)
            k = s + lag
            ratio = float(np.max(fractional_norm(family, times[k], alpha, U) / base))
            worst[lag] = max(worst.get(lag, 0.0), ratio)
            lag *= 2
    for lag in sorted(worst):
        lags.append(lag * lattice.dt)
        ratios.append(worst[lag])
    if alpha == beta:
        slope, r2 = 0.0, 1.0
    else:
        slope, _, r2 = fit_power_law(lags, ratios)
    constant = max(r * l**(alpha - beta) for l, r in zip(lags, ratios))
    report = SmoothingReport(alpha=alpha, beta=beta, slope=float(slope), constant=float(constant),
                             worst_ratio=float(max(ratios)), r2=float(r2), lags=lags, ratios=ratios)
    log(f"Smoothing probe (alpha = {alpha}, beta = {beta}): slope {report.slope:.3f}, C = {report.constant:.4g}")
    return report
