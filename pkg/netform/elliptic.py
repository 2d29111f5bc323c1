"""
Pressure equation -div[(I + m m^T) grad p] = S with p = 0 on the boundary
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from netform.errors import NonFiniteField, SolverDiverged
from netform.mesh import (
    Grid,
    ScalarField,
    VectorField,
    central_difference_matrix,
    flux_matrix,
    laplacian_matrix,
    scatter_interior,
)

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-10
# Extra CG restarts from the current iterate when the recursive residual
# drifted away from the true one
MAX_REFINEMENTS = 3


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """
    Assembled operator over interior unknowns.

    ``matrix`` is the full anisotropic operator, the sum of the m = 0
    operator ``laplacian`` and the m (x) m part ``cross``.
    """

    grid: Grid
    matrix: sp.csr_matrix
    laplacian: sp.csr_matrix
    cross: sp.csr_matrix
    max_m2: float

    @property
    def unknowns(self) -> int:
        return self.matrix.shape[0]

    def apply(self, p: ScalarField) -> np.ndarray:
        return self.matrix @ p.interior()

    def symmetry_defect(self) -> float:
        diff = abs(self.matrix - self.matrix.T)
        return float(diff.max()) if diff.nnz else 0.0


def _face_average(values: np.ndarray, axis: int) -> np.ndarray:
    n = values.shape[axis]
    return 0.5 * (np.take(values, np.arange(n - 1), axis=axis) + np.take(values, np.arange(1, n), axis=axis))


def face_m2(m: VectorField):
    """m_a^2 averaged onto the faces of axis a, one array per axis"""
    arr = m.array()
    return [_face_average(arr[a] ** 2, a) for a in range(m.grid.dim)]


def face_coefficients(m: VectorField):
    """Diagonal tensor entries 1 + m_a^2 on the faces of axis a"""
    return [1.0 + f for f in face_m2(m)]


def face_tensor_bounds(m: VectorField) -> Tuple[float, float]:
    """
    Smallest slack on each side of |xi|^2 <= A_face xi.xi <= (1 + max|m|^2) |xi|^2
    over all faces and coordinate directions, the max taken over the two
    nodes of the face. Negative entries mean the sandwich is violated.
    """
    grid = m.grid
    mag2 = m.magnitude_squared().values
    lower = upper_slack = np.inf
    for a, coeff in enumerate(face_coefficients(m)):
        lo = np.take(mag2, np.arange(grid.n[a] - 1), axis=a)
        hi = np.take(mag2, np.arange(1, grid.n[a]), axis=a)
        upper = 1.0 + np.maximum(lo, hi)
        lower = min(lower, float(np.min(coeff - 1.0)))
        upper_slack = min(upper_slack, float(np.min(upper - coeff)))
    return lower, upper_slack


def cross_matrix(m: VectorField) -> sp.csr_matrix:
    """
    The m (x) m part of the operator: face-averaged m_a^2 fluxes plus the
    mixed terms -(Dx a12 Dy + Dy a12 Dx) with central differences.
    """
    grid = m.grid
    matrix = flux_matrix(grid, face_m2(m))
    if grid.dim == 2:
        arr = m.array()
        a12 = sp.diags((arr[0] * arr[1])[grid.interior_mask()])
        dx = central_difference_matrix(grid, 0)
        dy = central_difference_matrix(grid, 1)
        matrix = matrix - (dx @ a12 @ dy + dy @ a12 @ dx)
    return (0.5 * (matrix + matrix.T)).tocsr()


def assemble(m: VectorField) -> EllipticOperator:
    if not m.is_finite():
        raise NonFiniteField("conductance field contains non-finite values")
    grid = m.grid
    laplacian = laplacian_matrix(grid)
    cross = cross_matrix(m)
    matrix = (laplacian + cross).tocsr()
    max_m2 = float(np.max(m.magnitude_squared().values))
    logger.debug("assembled %d-unknown operator, max|m|^2=%.3e", matrix.shape[0], max_m2)
    return EllipticOperator(grid=grid, matrix=matrix, laplacian=laplacian, cross=cross, max_m2=max_m2)


def _pcg(matrix: sp.csr_matrix, rhs: np.ndarray, tol: float, maxiter: int) -> np.ndarray:
    """Diagonally preconditioned CG with true-residual refinement"""
    preconditioner = sp.diags(1.0 / matrix.diagonal())
    target = tol * np.linalg.norm(rhs)
    x = np.zeros_like(rhs)
    residual = rhs.copy()
    for attempt in range(MAX_REFINEMENTS + 1):
        rnorm = np.linalg.norm(residual)
        if rnorm <= target:
            return x
        dx, info = cg(matrix, residual, rtol=min(target / rnorm, 0.5), atol=0.0,
                      maxiter=maxiter, M=preconditioner)
        if info != 0:
            raise SolverDiverged(f"conjugate gradient stopped with info={info} after {maxiter} iterations")
        x = x + dx
        residual = rhs - matrix @ x
        logger.debug("pcg pass %d: relative residual %.3e", attempt, np.linalg.norm(residual) / max(np.linalg.norm(rhs), 1e-300))
    if np.linalg.norm(residual) > target:
        raise SolverDiverged("conjugate gradient could not reach the requested residual")
    return x


def solve_pressure(
    m: VectorField,
    S: ScalarField,
    tol: float = DEFAULT_CG_TOL,
    maxiter: Optional[int] = None,
    op: Optional[EllipticOperator] = None,
) -> ScalarField:
    """
    Solve for the pressure with zero boundary values.

    Returns p with ||A p - S_interior|| <= tol * ||S_interior||; raises
    SolverDiverged when the iteration cap (default 20 * unknowns) is hit.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    op = op if op is not None else assemble(m)
    grid = m.grid
    rhs = S.interior()
    if not np.any(rhs):
        return ScalarField.zeros(grid)
    maxiter = maxiter if maxiter is not None else 20 * op.unknowns
    x = _pcg(op.matrix, rhs, tol, maxiter)
    p = ScalarField(grid, scatter_interior(grid, x))
    if np.all(S.values >= 0) and np.min(p.values) < -tol * max(np.max(np.abs(p.values)), 1.0):
        # discrete maximum principle is not guaranteed once cross terms dominate
        logger.warning("pressure dips to %.3e for a non-negative source", np.min(p.values))
    return p


def residual(op: EllipticOperator, p: ScalarField, S: ScalarField) -> float:
    """Relative residual ||A p - S|| / ||S|| over interior nodes"""
    rhs = S.interior()
    scale = max(np.linalg.norm(rhs), 1e-300)
    return float(np.linalg.norm(op.apply(p) - rhs) / scale)


def rayleigh_bounds(
    op: EllipticOperator,
    m: VectorField,
    trials: int,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """
    Min and max of (A xi . xi) / (L xi . xi) over random interior vectors,
    L being the discrete Laplacian. Expected inside [1, 1 + max|m|^2].
    """
    if trials < 1:
        raise ValueError("rayleigh_bounds needs at least one trial")
    rng = rng if rng is not None else np.random.default_rng(0)
    xi = rng.standard_normal((op.unknowns, trials))
    num = np.einsum("ij,ij->j", xi, op.matrix @ xi)
    den = np.einsum("ij,ij->j", xi, op.laplacian @ xi)
    ratios = num / den
    lo, hi = float(ratios.min()), float(ratios.max())
    upper = 1.0 + float(np.max(m.magnitude_squared().values))
    if lo < 1.0 - 1e-8 or hi > upper + 1e-8:
        logger.warning("rayleigh quotients [%.6g, %.6g] leave [1, %.6g]", lo, hi, upper)
    return lo, hi
