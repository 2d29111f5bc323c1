"""
Uniform tensor grids, nodal fields and the discrete operators shared by
every solver and diagnostic
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from netform.errors import DomainError, NonFiniteField

logger = logging.getLogger(__name__)

# Tolerance used when deciding whether a node lies on a ball boundary
BALL_SLACK = 1e-12


def _as_tuple(value: Union[float, Sequence[float]], dim: int, cast) -> Tuple:
    if np.isscalar(value):
        return tuple(cast(value) for _ in range(dim))
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class Grid:
    """
    Uniform node-centred grid on an interval or a rectangle.

    Nodes include the boundary; spacing along axis a is
    extent[a] / (n[a] - 1). Axis 0 is x, axis 1 is y, and field values
    are stored in C (row-major) order with shape ``n``.
    """

    dim: int
    n: Tuple[int, ...]
    extent: Tuple[float, ...]
    origin: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"grid dimension must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "n", _as_tuple(self.n, self.dim, int))
        object.__setattr__(self, "extent", _as_tuple(self.extent, self.dim, float))
        origin = self.origin if self.origin != () else 0.0
        object.__setattr__(self, "origin", _as_tuple(origin, self.dim, float))
        if not (len(self.n) == len(self.extent) == len(self.origin) == self.dim):
            raise DomainError("n, extent and origin need one entry per axis")
        if any(k < 3 for k in self.n):
            raise DomainError(f"every axis needs at least 3 nodes, got {self.n}")
        if any(not np.isfinite(L) or L <= 0 for L in self.extent):
            raise DomainError(f"extents must be positive, got {self.extent}")

    @classmethod
    def uniform(cls, dim: int, n: int, extent: float = 1.0, origin: float = 0.0) -> "Grid":
        return cls(dim=dim, n=(n,) * dim, extent=(extent,) * dim, origin=(origin,) * dim)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.n

    @property
    def h(self) -> Tuple[float, ...]:
        return tuple(L / (k - 1) for L, k in zip(self.extent, self.n))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def interior_size(self) -> int:
        return int(np.prod([k - 2 for k in self.n]))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    def coordinates(self) -> List[np.ndarray]:
        return [np.linspace(o, o + L, k) for o, L, k in zip(self.origin, self.extent, self.n)]

    def mesh(self) -> List[np.ndarray]:
        return np.meshgrid(*self.coordinates(), indexing="ij")

    def axis_weights(self, axis: int) -> np.ndarray:
        """Trapezoid weights along one axis"""
        w = np.full(self.n[axis], self.h[axis])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def cell_volumes(self) -> np.ndarray:
        """Dual-cell measure of every node; sums to the domain measure"""
        weights = self.axis_weights(0)
        for a in range(1, self.dim):
            weights = np.multiply.outer(weights, self.axis_weights(a))
        return weights

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            index = [slice(None)] * self.dim
            index[a] = 0
            mask[tuple(index)] = True
            index[a] = -1
            mask[tuple(index)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def interior_index(self) -> np.ndarray:
        """Node array holding the interior unknown number, -1 on the boundary"""
        index = np.full(self.shape, -1, dtype=np.int64)
        interior = self.interior_mask()
        index[interior] = np.arange(int(interior.sum()))
        return index

    def ball_mask(self, center: Sequence[float], radius: float) -> np.ndarray:
        """Nodes of the closed ball B_r(center) intersected with the grid"""
        dist2 = np.zeros(self.shape)
        for x, c in zip(self.mesh(), center):
            dist2 = dist2 + (x - float(c)) ** 2
        return dist2 <= (radius * (1.0 + BALL_SLACK)) ** 2

    def contains(self, point: Sequence[float]) -> bool:
        return all(o <= float(x) <= o + L for x, o, L in zip(point, self.origin, self.extent))


@dataclass(frozen=True)
class TruncationBounds:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"truncation needs lo < hi, got ({self.lo}, {self.hi})")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a scalar on a grid; read-only once built"""

    grid: Grid
    values: np.ndarray
    blown_up: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise DomainError(
                    f"field has {values.size} values, grid has {self.grid.size} nodes"
                )
            values = values.reshape(self.grid.shape)
        if not self.blown_up and not np.all(np.isfinite(values)):
            raise NonFiniteField("scalar field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "ScalarField":
        values = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, values)

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior_mask()]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField(self.grid, factor * self.values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values - other.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """A dim-tuple of scalar components living on one grid"""

    grid: Grid
    components: Tuple[ScalarField, ...]

    def __post_init__(self):
        components = tuple(self.components)
        if len(components) != self.grid.dim:
            raise DomainError(
                f"vector field needs {self.grid.dim} components, got {len(components)}"
            )
        if any(c.grid != self.grid for c in components):
            raise DomainError("all components must share the field's grid")
        object.__setattr__(self, "components", components)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, tuple(ScalarField.zeros(grid) for _ in range(grid.dim)))

    @classmethod
    def from_array(cls, grid: Grid, array: np.ndarray, blown_up: bool = False) -> "VectorField":
        """Build from an array of shape (dim, *grid.shape)"""
        array = np.asarray(array, dtype=np.float64)
        return cls(grid, tuple(ScalarField(grid, array[a], blown_up=blown_up) for a in range(grid.dim)))

    def array(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def magnitude_squared(self) -> ScalarField:
        return ScalarField(self.grid, np.sum(self.array() ** 2, axis=0))

    def dot(self, other: "VectorField") -> ScalarField:
        return ScalarField(self.grid, np.sum(self.array() * other.array(), axis=0))

    def is_finite(self) -> bool:
        return all(c.is_finite() for c in self.components)

    def scaled(self, factor: float) -> "VectorField":
        return VectorField.from_array(self.grid, factor * self.array())

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField.from_array(self.grid, self.array() - other.array())


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside, one-sided second order on the boundary"""
    grid = f.grid
    parts = [
        np.gradient(f.values, grid.h[a], axis=a, edge_order=2) for a in range(grid.dim)
    ]
    return VectorField(grid, tuple(ScalarField(grid, d) for d in parts))


def divergence(v: VectorField) -> ScalarField:
    """
    Sum of per-axis derivatives with the same stencils as ``gradient``.

    For v and f both vanishing on the boundary,
    inner(divergence(v), f) == -inner_vector(v, gradient(f)) up to rounding.
    """
    grid = v.grid
    total = np.zeros(grid.shape)
    for a, comp in enumerate(v.components):
        total += np.gradient(comp.values, grid.h[a], axis=a, edge_order=2)
    return ScalarField(grid, total)


def truncate(f: ScalarField, bounds: TruncationBounds) -> ScalarField:
    return ScalarField(f.grid, np.clip(f.values, bounds.lo, bounds.hi))


def integrate(values: np.ndarray, grid: Grid) -> float:
    return float(np.sum(grid.cell_volumes() * values))


def inner(f: ScalarField, g: ScalarField) -> float:
    return integrate(f.values * g.values, f.grid)


def inner_vector(u: VectorField, v: VectorField) -> float:
    return sum(inner(a, b) for a, b in zip(u.components, v.components))


def lq_norm(f: ScalarField, q: float) -> float:
    if q < 1:
        raise DomainError(f"L^q norms need q >= 1, got {q}")
    return integrate(np.abs(f.values) ** q, f.grid) ** (1.0 / q)


def sup_norm(f: ScalarField) -> float:
    return float(np.max(np.abs(f.values)))


def weak_lq_norm(f: ScalarField, q: float) -> float:
    """
    Weak L^q quasi-norm: sup over t of t * |{|f| >= t}|^(1/q).

    The supremum is attained at one of the distinct values of |f|, so only
    those thresholds are scanned.
    """
    if q < 1:
        raise DomainError(f"weak L^q norms need q >= 1, got {q}")
    magnitude = np.abs(f.values).ravel()
    weights = f.grid.cell_volumes().ravel()
    levels, inverse = np.unique(magnitude, return_inverse=True)
    mass = np.bincount(inverse, weights=weights, minlength=levels.size)
    # measure of {|f| >= levels[i]}
    tail = np.cumsum(mass[::-1])[::-1]
    positive = levels > 0
    if not np.any(positive):
        return 0.0
    return float(np.max(levels[positive] * tail[positive] ** (1.0 / q)))


def dirichlet_energy(f: ScalarField) -> float:
    """
    Face-difference form of the integral of |grad f|^2.

    Equals <-Laplacian_h f, f> for fields vanishing on the boundary, so the
    energy bookkeeping matches the diffusion solves exactly.
    """
    grid = f.grid
    total = 0.0
    for a in range(grid.dim):
        diff = np.diff(f.values, axis=a) / grid.h[a]
        weights = np.ones(())
        for b in range(grid.dim):
            w = np.full(grid.n[a] - 1, grid.h[a]) if b == a else grid.axis_weights(b)
            weights = np.multiply.outer(weights, w)
        total += float(np.sum(weights * diff ** 2))
    return total


def vector_dirichlet_energy(v: VectorField) -> float:
    return sum(dirichlet_energy(c) for c in v.components)


def flux_matrix(grid: Grid, face_coefficients: Sequence[np.ndarray]) -> sp.csr_matrix:
    """
    Conservative two-point flux operator -div(c grad .) over interior nodes.

    ``face_coefficients[a]`` holds one coefficient per face along axis a,
    i.e. an array with n[a] - 1 entries along that axis. Dirichlet boundary
    values are eliminated (taken as zero).
    """
    index = grid.interior_index()
    unknowns = grid.interior_size
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for a in range(grid.dim):
        coeff = np.asarray(face_coefficients[a], dtype=np.float64) / grid.h[a] ** 2
        lo = np.take(index, np.arange(grid.n[a] - 1), axis=a).ravel()
        hi = np.take(index, np.arange(1, grid.n[a]), axis=a).ravel()
        c = coeff.ravel()
        for side in (lo, hi):
            keep = side >= 0
            rows.append(side[keep])
            cols.append(side[keep])
            vals.append(c[keep])
        both = (lo >= 0) & (hi >= 0)
        rows.extend([lo[both], hi[both]])
        cols.extend([hi[both], lo[both]])
        vals.extend([-c[both], -c[both]])
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(unknowns, unknowns),
    )
    return matrix.tocsr()


def laplacian_matrix(grid: Grid) -> sp.csr_matrix:
    """Negative discrete Laplacian, (2*dim+1)-point stencil, SPD"""
    faces = [np.ones(tuple(k - 1 if b == a else k for b, k in enumerate(grid.n))) for a in range(grid.dim)]
    return flux_matrix(grid, faces)


def central_difference_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    """Central first difference over interior nodes with zero Dirichlet extension"""
    index = grid.interior_index()
    n = grid.n[axis]
    mid = np.take(index, np.arange(1, n - 1), axis=axis).ravel()
    lo = np.take(index, np.arange(0, n - 2), axis=axis).ravel()
    hi = np.take(index, np.arange(2, n), axis=axis).ravel()
    scale = 1.0 / (2.0 * grid.h[axis])
    up = (mid >= 0) & (hi >= 0)
    down = (mid >= 0) & (lo >= 0)
    rows = np.concatenate([mid[up], mid[down]])
    cols = np.concatenate([hi[up], lo[down]])
    vals = np.concatenate([np.full(int(up.sum()), scale), np.full(int(down.sum()), -scale)])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(grid.interior_size,) * 2)
    return matrix.tocsr()


def scatter_interior(grid: Grid, interior_values: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Place interior unknowns into a full nodal array with zero boundary"""
    full = np.zeros(grid.shape) if out is None else out
    full[grid.interior_mask()] = interior_values
    return full
