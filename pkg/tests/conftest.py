import numpy as np
import pytest

from netform.coupling import Trajectory
from netform.mesh import Grid, ScalarField, VectorField
from netform.parabolic import PhysParams


def bump_profile(grid: Grid, center=0.5, width=0.3, amplitude=1.0) -> np.ndarray:
    """Smooth compact bump, zero on the boundary for the default arguments"""
    center = np.broadcast_to(np.asarray(center, dtype=np.float64), (grid.dim,))
    rho2 = sum((x - c) ** 2 for x, c in zip(grid.mesh(), center)) / width ** 2
    out = np.zeros(grid.shape)
    inside = rho2 < 1.0
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    out[grid.boundary_mask()] = 0.0
    return out


def gaussian_profile(grid: Grid, center=0.5, width=0.1, amplitude=1.0) -> np.ndarray:
    center = np.broadcast_to(np.asarray(center, dtype=np.float64), (grid.dim,))
    rho2 = sum((x - c) ** 2 for x, c in zip(grid.mesh(), center)) / width ** 2
    return amplitude * np.exp(-0.5 * rho2)


@pytest.fixture
def grid1d():
    return Grid.uniform(1, 65)


@pytest.fixture
def grid2d():
    return Grid.uniform(2, 17)


@pytest.fixture
def make_params():
    """Bump conductance along x and a gaussian source"""

    def build(grid, m_amp=0.1, s_amp=0.0, D=1.0, E=1.0, gamma=1.0, width=0.3):
        m0 = np.zeros((grid.dim,) + grid.shape)
        m0[0] = bump_profile(grid, width=width, amplitude=m_amp)
        S = gaussian_profile(grid, amplitude=s_amp)
        return PhysParams(D=D, E=E, gamma=gamma, S=ScalarField(grid, S), m0=VectorField.from_array(grid, m0))

    return build


@pytest.fixture
def make_trajectory():
    """Trajectory from callables m(t) -> (dim, *shape) and p(t) -> shape"""

    def build(grid, times, m_of_t, p_of_t=None):
        traj = Trajectory(grid, float(times[1] - times[0]) if len(times) > 1 else 1.0)
        for t in times:
            p = np.zeros(grid.shape) if p_of_t is None else p_of_t(t)
            traj.append(float(t), VectorField.from_array(grid, m_of_t(t)), ScalarField(grid, p))
        return traj

    return build
