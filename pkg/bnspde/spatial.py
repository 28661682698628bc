"""Structured grids on the unit interval and the unit square."""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    """Vertex-centred uniform grid on (0,1)^d, d in {1, 2}.

    Attributes:
        dimension: spatial dimension d
        n_per_axis: number of cells per axis, h = 1 / n_per_axis
        nodes: (N, d) node coordinates, lexicographic with the first axis fastest
        weights: (N,) trapezoidal volume weights, summing to 1
        boundary_nodes: indices into ``nodes`` of the nodes on the boundary,
            ordered counter-clockwise by arc length starting at the origin
        boundary_weights: surface weights per boundary node
        boundary_normals: outward normals per boundary node; corners get the
            sum of both adjacent edge normals
        arclength: arc-length parameter of each boundary node
    """
    dimension: int
    n_per_axis: int
    h: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)
    boundary_weights: np.ndarray = field(repr=False)
    boundary_normals: np.ndarray = field(repr=False)
    arclength: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.weights)

    @property
    def boundary_size(self):
        return len(self.boundary_nodes)

    @property
    def axis_points(self):
        return self.n_per_axis + 1

    def index(self, i, j=0):
        return i + self.axis_points * j

    def coordinate(self, axis):
        return self.nodes[:, axis]

    @property
    def boundary_coordinates(self):
        return self.nodes[self.boundary_nodes]

    def __str__(self):
        return f"Grid(d={self.dimension}, n={self.n_per_axis}, h={self.h})"


def make_grid(dimension, n_per_axis):
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    if int(n_per_axis) != n_per_axis or n_per_axis < 4:
        raise GridError(f"n_per_axis must be an integer >= 4, got {n_per_axis}")
    n = int(n_per_axis)
    h = 1.0 / n
    s = np.arange(n + 1) * h
    w1 = np.full(n + 1, h)
    w1[0] = w1[-1] = 0.5 * h

    if dimension == 1:
        nodes = s[:, None]
        weights = w1
        boundary_nodes = np.array([0, n])
        boundary_weights = np.ones(2)
        boundary_normals = np.array([[-1.0], [1.0]])
        arclength = np.array([0.0, 1.0])
    else:
        s1, s2 = np.meshgrid(s, s, indexing="xy")
        nodes = np.stack([s1.ravel(), s2.ravel()], axis=1)
        weights = np.outer(w1, w1).ravel()
        m = n + 1
        # counter-clockwise: bottom, right, top, left; each edge owns its first corner
        bottom = [i for i in range(n)]
        right = [n + m * j for j in range(n)]
        top = [i + m * n for i in range(n, 0, -1)]
        left = [m * j for j in range(n, 0, -1)]
        boundary_nodes = np.array(bottom + right + top + left)
        # every boundary node carries one edge length h; corners split it half and half
        boundary_weights = np.full(4 * n, h)
        arclength = np.arange(4 * n) * h
        normals = []
        for p in boundary_nodes:
            x, y = nodes[p]
            normal = np.zeros(2)
            if x == 0.0:
                normal[0] -= 1.0
            if x == 1.0:
                normal[0] += 1.0
            if y == 0.0:
                normal[1] -= 1.0
            if y == 1.0:
                normal[1] += 1.0
            normals.append(normal)
        boundary_normals = np.array(normals)

    for array in (nodes, weights, boundary_nodes, boundary_weights, boundary_normals, arclength):
        array.setflags(write=False)
    return Grid(dimension=dimension,
                n_per_axis=n,
                h=h,
                nodes=nodes,
                weights=weights,
                boundary_nodes=boundary_nodes,
                boundary_weights=boundary_weights,
                boundary_normals=boundary_normals,
                arclength=arclength)


def _check_values(grid, values, size):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0 or values.shape[0] != size:
        raise GridError(f"expected {size} values on {grid}, got shape {values.shape}")
    return values


def lp_norm(grid, values, p):
    """Weighted discrete L^p norm; columns of a 2D array are normed separately."""
    if p < 1:
        raise GridError(f"p must be >= 1, got {p}")
    values = _check_values(grid, values, grid.size)
    if np.isinf(p):
        return np.max(np.abs(values), axis=0)
    w = grid.weights if values.ndim == 1 else grid.weights[:, None]
    if p == 2:
        return np.sqrt(np.sum(w * values * values, axis=0))
    return np.sum(w * np.abs(values)**p, axis=0)**(1.0 / p)


def boundary_lp_norm(grid, values, p):
    values = _check_values(grid, values, grid.boundary_size)
    if np.isinf(p):
        return np.max(np.abs(values), axis=0)
    w = grid.boundary_weights if values.ndim == 1 else grid.boundary_weights[:, None]
    return np.sum(w * np.abs(values)**p, axis=0)**(1.0 / p)


def _columns(f, g):
    """Pair a vector with every column of a 2D argument."""
    if f.ndim == 2 or g.ndim == 2:
        return (f if f.ndim == 2 else f[:, None]), (g if g.ndim == 2 else g[:, None])
    return f, g


def inner(grid, f, g):
    f, g = _columns(_check_values(grid, f, grid.size), _check_values(grid, g, grid.size))
    w = grid.weights if f.ndim == 1 else grid.weights[:, None]
    return np.sum(w * f * g, axis=0)


def boundary_inner(grid, y, z):
    y, z = _columns(_check_values(grid, y, grid.boundary_size), _check_values(grid, z, grid.boundary_size))
    w = grid.boundary_weights if y.ndim == 1 else grid.boundary_weights[:, None]
    return np.sum(w * y * z, axis=0)


def trace(grid, values):
    values = _check_values(grid, values, grid.size)
    return values[grid.boundary_nodes]


def extend_boundary(grid, y):
    """Scatter boundary values into a node vector that is zero off the boundary."""
    y = _check_values(grid, y, grid.boundary_size)
    out = np.zeros((grid.size,) + y.shape[1:])
    out[grid.boundary_nodes] = y
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        assert len(self.values) == self.grid.size, "values must match the grid nodes"

    def lp_norm(self, p):
        return lp_norm(self.grid, self.values, p)

    def trace(self):
        return trace(self.grid, self.values)


def sample(grid, fn):
    """Evaluate fn on node coordinates, fn(s) with s of shape (N, d)."""
    return np.asarray(fn(grid.nodes), dtype=np.float64) * np.ones(grid.size)


def write_grid_function_csv(filename, grid, values, name="value", header=None):
    """Node coordinates and values; ``header`` lines are written first as # comments."""
    columns = {f"s{k + 1}": grid.nodes[:, k] for k in range(grid.dimension)}
    columns[name] = np.asarray(values)
    with open(filename, "w") as f:
        for line in header or []:
            f.write(f"# {line}\n")
        pd.DataFrame(columns).to_csv(f, index=False, float_format="%.17g")


def read_grid_function_csv(filename, grid, name="value"):
    df = pd.read_csv(filename, comment="#", float_precision="round_trip")
    values = df[name].to_numpy(dtype=np.float64)
    if len(values) != grid.size:
        raise GridError(f"{filename} holds {len(values)} values, grid has {grid.size} nodes")
    return values
