"""Catalog of globally Lipschitz coefficient functions for F, G, B and C."""

from collections import namedtuple
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

# lipschitz and growth are functions of the parameter tuple
CatalogEntry = namedtuple("CatalogEntry", "arity build lipschitz growth")

CATALOG = {
    "zero": CatalogEntry(0, lambda: (lambda x: np.zeros_like(x)), lambda: 0.0, lambda: 0.0),
    "constant": CatalogEntry(1, lambda c: (lambda x: np.full_like(x, c)), lambda c: 0.0, lambda c: abs(c)),
    "affine": CatalogEntry(2, lambda c0, c1: (lambda x: c0 + c1 * x), lambda c0, c1: abs(c1),
                           lambda c0, c1: max(abs(c0), abs(c1))),
    "tanh": CatalogEntry(1, lambda scale: (lambda x: np.tanh(scale * x)), lambda scale: abs(scale),
                         lambda scale: 1.0),
    "sin": CatalogEntry(1, lambda scale: (lambda x: np.sin(scale * x)), lambda scale: abs(scale),
                        lambda scale: 1.0),
    "clipped_linear": CatalogEntry(2, lambda c, cap: (lambda x: np.clip(c * x, -abs(cap), abs(cap))),
                                   lambda c, cap: abs(c), lambda c, cap: abs(cap)),
}

TARGETS = ("F", "G", "B", "C")


@dataclass(frozen=True)
class NonlinearitySpec:
    """A catalog function applied as one of the coefficients of the equation.

    F acts pointwise on the state, B multiplies the interior noise field
    pointwise by b(U). G and C read the state through its spatial mean, which
    makes them Lipschitz from L^p(S) into functions on the boundary.
    """
    name: str
    params: Tuple[float, ...]
    target: str
    fn: Callable
    lipschitz: float
    growth: float

    @property
    def is_zero(self):
        return self.name == "zero" or (self.name == "constant" and self.params[0] == 0.0)

    @property
    def is_constant(self):
        return self.name in ("zero", "constant")

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64))


def make_nonlinearity(name, params=(), target="F"):
    assert target in TARGETS, f"unknown target {target}"
    entry = CATALOG.get(name)
    if entry is None:
        raise NotImplementedError(f"unknown nonlinearity \"{name}\"; choose one of {sorted(CATALOG)}")
    params = tuple(float(p) for p in params)
    assert len(params) == entry.arity, f"{name} takes {entry.arity} parameters, got {len(params)}"
    return NonlinearitySpec(name=name,
                            params=params,
                            target=target,
                            fn=entry.build(*params),
                            lipschitz=float(entry.lipschitz(*params)),
                            growth=float(entry.growth(*params)))


def make_nonlinearities(settings):
    return {target: make_nonlinearity(settings[target].name, settings[target].params, target) for target in TARGETS}
