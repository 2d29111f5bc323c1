"""
Conductance equation dm/dt - D^2 lap m - E^2 (m.grad p) grad p + |m|^(2(gamma-1)) m = 0

One IMEX step: backward Euler diffusion, explicit activation, reaction
semi-implicit (or explicit) with a regularised coefficient.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from netform.errors import BlowUp, DomainError, SolverDiverged
from netform.mesh import Grid, ScalarField, VectorField, gradient, laplacian_matrix

logger = logging.getLogger(__name__)

DEFAULT_EPS_REG = 1e-12


class ReactionMode(str, Enum):
    SEMI_IMPLICIT = "semi_implicit"
    EXPLICIT = "explicit"


@dataclass(frozen=True, eq=False)
class PhysParams:
    """
    Data of the coupled system: diffusion D, activation E, metabolic
    exponent gamma, source S and initial conductance m0.

    E = 0 is admitted as the decoupled limit.
    """

    D: float
    E: float
    gamma: float
    S: ScalarField
    m0: VectorField

    def __post_init__(self):
        if not self.D > 0:
            raise DomainError(f"D must be positive, got {self.D}")
        if not self.E >= 0:
            raise DomainError(f"E must be non-negative, got {self.E}")
        if not self.gamma > 0.5:
            raise DomainError(f"gamma must lie in (1/2, inf), got {self.gamma}")
        if self.S.grid != self.m0.grid:
            raise DomainError("source and initial conductance live on different grids")
        boundary = self.m0.grid.boundary_mask()
        if np.any(self.m0.array()[:, boundary] != 0.0):
            raise DomainError("initial conductance must vanish on the boundary")

    @property
    def grid(self) -> Grid:
        return self.S.grid

    def scaled(self, factor: float) -> "PhysParams":
        """Same physics with data (factor * m0, factor * S)"""
        return PhysParams(self.D, self.E, self.gamma, self.S.scaled(factor), self.m0.scaled(factor))


@dataclass(frozen=True)
class StepConfig:
    """
    Time step settings. ``forcing`` is an optional source g(t) added to the
    right-hand side at the new time level; ``diffusion=False`` drops the
    D^2 lap term (both are test hooks).
    """

    dt: float
    eps_reg: float = DEFAULT_EPS_REG
    reaction_mode: ReactionMode = ReactionMode.SEMI_IMPLICIT
    dt_max: Optional[float] = None
    diffusion: bool = True
    forcing: Optional[Callable[[float], VectorField]] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.eps_reg < 0:
            raise DomainError(f"eps_reg must be non-negative, got {self.eps_reg}")
        if self.dt_max is not None and self.dt > self.dt_max:
            raise DomainError(f"dt={self.dt} exceeds the stability guard dt_max={self.dt_max}")
        object.__setattr__(self, "reaction_mode", ReactionMode(self.reaction_mode))


@lru_cache(maxsize=16)
def _laplacian(grid: Grid) -> sp.csr_matrix:
    return laplacian_matrix(grid)


def reaction_coefficient(mag2: np.ndarray, gamma: float, eps_reg: float) -> np.ndarray:
    """(|m|^2 + eps)^(gamma - 1), with eps forced to 0 when gamma >= 1"""
    eps = 0.0 if gamma >= 1 else eps_reg
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return (mag2 + eps) ** (gamma - 1.0)


def activation(m: VectorField, p: ScalarField, E: float) -> VectorField:
    """E^2 (m . grad p) grad p"""
    grad_p = gradient(p)
    g = grad_p.array()
    drive = (E ** 2) * np.sum(m.array() * g, axis=0) * g
    return VectorField.from_array(m.grid, drive, blown_up=not np.all(np.isfinite(drive)))


def step_with_forcing(
    m: VectorField,
    forcing: Union[VectorField, np.ndarray],
    params: PhysParams,
    cfg: StepConfig,
) -> VectorField:
    """
    Backward Euler step of dm/dt - D^2 lap m + R(m) m = f with f frozen.

    All components share one factorization since the reaction coefficient
    depends on |m| only.
    """
    grid = m.grid
    interior = grid.interior_mask()
    f = forcing.array() if isinstance(forcing, VectorField) else np.asarray(forcing)
    old = m.array()
    mag2 = np.sum(old ** 2, axis=0)[interior]
    coeff = reaction_coefficient(mag2, params.gamma, cfg.eps_reg)
    semi = cfg.reaction_mode == ReactionMode.SEMI_IMPLICIT

    diag = np.full(mag2.shape, 1.0 / cfg.dt)
    if semi:
        diag = diag + coeff
    if not np.all(np.isfinite(diag)):
        raise BlowUp("reaction coefficient overflowed")
    system = sp.diags(diag)
    if cfg.diffusion:
        system = system + params.D ** 2 * _laplacian(grid)
    try:
        solve = factorized(sp.csc_matrix(system))
    except RuntimeError as e:
        raise SolverDiverged(f"backward Euler factorization failed: {e}")

    new = np.zeros_like(old)
    with np.errstate(over="ignore", invalid="ignore"):
        for a in range(grid.dim):
            rhs = old[a][interior] / cfg.dt + f[a][interior]
            if not semi:
                rhs = rhs - coeff * old[a][interior]
            new[a][interior] = solve(rhs)
    if not np.all(np.isfinite(new)):
        raise BlowUp("conductance update produced non-finite values")
    return VectorField.from_array(grid, new)


def advance(
    m: VectorField,
    p: ScalarField,
    params: PhysParams,
    cfg: StepConfig,
    t: float = 0.0,
) -> VectorField:
    """One IMEX step from time t to t + dt; boundary nodes stay zero"""
    drive = activation(m, p, params.E).array()
    if cfg.forcing is not None:
        drive = drive + cfg.forcing(t + cfg.dt).array()
    if not np.all(np.isfinite(drive)):
        raise BlowUp("activation term is non-finite", time=t)
    return step_with_forcing(m, drive, params, cfg)


def _power_map(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """|x|^(2 gamma - 2) x, continued by 0 at x = 0"""
    norm = np.linalg.norm(x, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    factor = np.where(norm > 0, safe ** (2.0 * gamma - 2.0), 0.0)
    return factor[..., None] * x


def monotonicity_gap(x, y, gamma):
    """
    Slack in the monotonicity inequality of the map x -> |x|^(2g-2) x.

    gamma >= 1:      (P(x) - P(y)).(x - y) - 2^(1-2g) |x - y|^(2g)
    1/2 < gamma < 1: (|x| + |y|)^(2-2g) (P(x) - P(y)).(x - y) - (2g - 1)|x - y|^2

    Accepts single vectors or stacks of shape (..., N); the result is
    expected to be >= -1e-12 (1 + |x| + |y|)^(2 gamma).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0.5):
        raise DomainError("monotonicity gap needs gamma > 1/2")
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    g = np.broadcast_to(gamma, x.shape[:-1])
    diff = x - y
    pairing = np.sum((_power_map(x, g) - _power_map(y, g)) * diff, axis=-1)
    dist = np.linalg.norm(diff, axis=-1)
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    large = pairing - 2.0 ** (1.0 - 2.0 * g) * dist ** (2.0 * g)
    small = (nx + ny) ** (2.0 - 2.0 * g) * pairing - (2.0 * g - 1.0) * dist ** 2
    gap = np.where(g >= 1.0, large, small)
    return float(gap[0]) if scalar else gap
