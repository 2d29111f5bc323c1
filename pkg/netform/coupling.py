"""
Drivers for the coupled system: time marching, the lagged successive
approximation scheme and the life-span sweep
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import trapezoid
from scipy.sparse.linalg import factorized

from netform.elliptic import DEFAULT_CG_TOL, assemble, cross_matrix, residual, solve_pressure
from netform.errors import BlowUp, DomainError, NonFiniteField, SolverDiverged
from netform.mesh import (
    Grid,
    ScalarField,
    VectorField,
    dirichlet_energy,
    gradient,
    integrate,
    laplacian_matrix,
    scatter_interior,
    vector_dirichlet_energy,
)
from netform.parabolic import DEFAULT_EPS_REG, PhysParams, ReactionMode, StepConfig, activation, advance, step_with_forcing

logger = logging.getLogger(__name__)

DEFAULT_BLOWUP_THRESHOLD = 1e6
# Consecutive non-decreasing eta ratios before a Picard run is flagged
NON_CONTRACTING_STREAK = 3


class RunStatus(str, Enum):
    COMPLETED = "completed"
    BLEW_UP = "blew_up"
    SOLVER_FAILED = "solver_failed"


@dataclass(frozen=True)
class Status:
    kind: RunStatus = RunStatus.COMPLETED
    time: Optional[float] = None
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.kind == RunStatus.COMPLETED


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    m: VectorField
    p: ScalarField


@dataclass(eq=False)
class Trajectory:
    """
    Time-stamped (m, p) snapshots of one run.

    Times start at 0 and increase strictly. ``dt`` is the step the run
    actually used and ``store_every`` the subsampling of stored levels.
    """

    grid: Grid
    dt: float
    store_every: int = 1
    snapshots: List[Snapshot] = field(default_factory=list)
    status: Status = field(default_factory=Status)

    def append(self, time: float, m: VectorField, p: ScalarField):
        if m.grid != self.grid or p.grid != self.grid:
            raise DomainError("snapshot lives on a different grid than the trajectory")
        if not self.snapshots and time != 0.0:
            raise DomainError(f"first snapshot must be at t=0, got {time}")
        if self.snapshots and time <= self.snapshots[-1].time:
            raise DomainError(f"snapshot times must increase, got {time} after {self.snapshots[-1].time}")
        self.snapshots.append(Snapshot(float(time), m, p))

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def m_array(self) -> np.ndarray:
        """Stacked conductance of shape (levels, dim, *grid.shape)"""
        return np.stack([s.m.array() for s in self.snapshots])

    def p_array(self) -> np.ndarray:
        return np.stack([s.p.values for s in self.snapshots])

    def until(self, time: float) -> "Trajectory":
        kept = [s for s in self.snapshots if s.time <= time * (1.0 + 1e-12)]
        status = self.status if len(kept) == len(self.snapshots) else Status()
        return Trajectory(self.grid, self.dt, self.store_every, kept, status)

    def is_stepwise(self) -> bool:
        """True when every time step is stored"""
        return self.store_every == 1


@dataclass(frozen=True)
class CouplingConfig:
    store_every: int = 1
    cg_tol: float = DEFAULT_CG_TOL
    blowup_threshold: float = DEFAULT_BLOWUP_THRESHOLD
    eps_reg: float = DEFAULT_EPS_REG
    reaction_mode: ReactionMode = ReactionMode.SEMI_IMPLICIT
    dt_max: Optional[float] = None

    def __post_init__(self):
        if self.store_every < 1:
            raise DomainError(f"store_every must be at least 1, got {self.store_every}")
        if not self.cg_tol > 0:
            raise DomainError(f"cg_tol must be positive, got {self.cg_tol}")
        if not self.blowup_threshold > 0:
            raise DomainError(f"blowup_threshold must be positive, got {self.blowup_threshold}")

    def step_config(self, dt: float) -> StepConfig:
        return StepConfig(dt=dt, eps_reg=self.eps_reg, reaction_mode=self.reaction_mode, dt_max=self.dt_max)


def time_levels(dt: float, t_end: float) -> np.ndarray:
    """
    Uniform levels 0 = t_0 < ... < t_n = t_end with t_end / n <= dt.
    """
    if not dt > 0 or not t_end > 0:
        raise DomainError(f"dt and t_end must be positive, got dt={dt}, t_end={t_end}")
    steps = max(1, int(np.ceil(t_end / dt - 1e-9)))
    return np.linspace(0.0, t_end, steps + 1)


def _check_grid(params: PhysParams, grid: Grid):
    if params.grid != grid:
        raise DomainError("initial data and source do not live on the requested grid")


def _sup_magnitude(m: VectorField) -> float:
    return float(np.sqrt(np.max(m.magnitude_squared().values)))


def run_coupled(
    params: PhysParams,
    grid: Grid,
    dt: float,
    t_end: float,
    cfg: Optional[CouplingConfig] = None,
    raise_on_failure: bool = True,
) -> Trajectory:
    """
    March the coupled system: solve for p at the current m, then advance m.

    Stops early with status blew_up once sup|m| exceeds the threshold or a
    step goes non-finite. A failing linear solve raises SolverDiverged
    stamped with the time, or is recorded as solver_failed when
    ``raise_on_failure`` is off.
    """
    cfg = cfg if cfg is not None else CouplingConfig()
    _check_grid(params, grid)
    times = time_levels(dt, t_end)
    step_cfg = cfg.step_config(times[1] - times[0])
    traj = Trajectory(grid, step_cfg.dt, cfg.store_every)

    m = params.m0
    try:
        p = solve_pressure(m, params.S, tol=cfg.cg_tol)
    except SolverDiverged as e:
        if raise_on_failure:
            raise e.at(0.0)
        traj.status = Status(RunStatus.SOLVER_FAILED, 0.0, str(e))
        return traj
    traj.append(0.0, m, p)

    last = len(times) - 1
    for k in range(1, last + 1):
        t = float(times[k])
        try:
            m_new = advance(m, p, params, step_cfg, t=float(times[k - 1]))
            p_new = solve_pressure(m_new, params.S, tol=cfg.cg_tol)
        except (BlowUp, NonFiniteField) as e:
            logger.info("blow-up at t=%.6g: %s", t, e)
            traj.status = Status(RunStatus.BLEW_UP, t, str(e))
            break
        except SolverDiverged as e:
            if raise_on_failure:
                raise e.at(t)
            logger.info("solver failed at t=%.6g: %s", t, e)
            traj.status = Status(RunStatus.SOLVER_FAILED, t, str(e))
            break
        m, p = m_new, p_new
        peak = _sup_magnitude(m)
        if peak > cfg.blowup_threshold:
            logger.info("sup|m|=%.3e passed the blow-up threshold at t=%.6g", peak, t)
            traj.append(t, m, p)
            traj.status = Status(RunStatus.BLEW_UP, t, f"sup|m|={peak:.6g} exceeds {cfg.blowup_threshold:.6g}")
            break
        if k % cfg.store_every == 0 or k == last:
            traj.append(t, m, p)
        logger.debug("step %d/%d t=%.6g sup|m|=%.4e", k, last, t, peak)

    logger.info("coupled run finished: %s after %d stored levels", traj.status.kind.value, len(traj))
    return traj


class PicardRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int
    a_k: float
    b_k: float
    d_k: float
    eta_k: float
    ratio: Optional[float] = None


class PicardTrace(BaseModel):
    """Per-iterate bounds of the lagged scheme; record 0 describes (m0, p0)"""

    model_config = ConfigDict(frozen=True)

    records: List[PicardRecord]
    non_contracting: bool = False
    converged: bool = False
    b_exponent: float

    @property
    def c0(self) -> float:
        return max((r.d_k for r in self.records), default=0.0)

    @property
    def etas(self) -> List[float]:
        return [r.eta_k for r in self.records if r.k >= 1]

    def __len__(self) -> int:
        return len(self.records)


def gradient_lq_norm(p: ScalarField, q: float) -> float:
    """||grad p||_q with the Euclidean length of the gradient"""
    g = gradient(p).magnitude_squared().values
    return integrate(np.sqrt(g) ** q, p.grid) ** (1.0 / q)


def _time_trapezoid(values: Sequence[float], times: np.ndarray) -> float:
    return float(trapezoid(np.asarray(values), times)) if len(times) > 1 else 0.0


def _iterate_bounds(grid: Grid, W: np.ndarray, P: np.ndarray, q: float) -> Tuple[float, float]:
    a = float(np.sqrt(np.max(np.sum(W ** 2, axis=1))))
    b = max(gradient_lq_norm(ScalarField(grid, P[j]), q) for j in range(P.shape[0]))
    return a, b


def _iterate_distance(grid: Grid, W: np.ndarray, W_prev: np.ndarray, P: np.ndarray, P_prev: np.ndarray, times: np.ndarray) -> float:
    """Space-time integral of |grad(w - w')|^2 + |grad(p - p')|^2"""
    per_level = [
        vector_dirichlet_energy(VectorField.from_array(grid, W[j] - W_prev[j]))
        + dirichlet_energy(ScalarField(grid, P[j] - P_prev[j]))
        for j in range(len(times))
    ]
    return _time_trapezoid(per_level, times)


def run_picard(
    params: PhysParams,
    grid: Grid,
    dt: float,
    t_end: float,
    k_max: int,
    cfg: Optional[CouplingConfig] = None,
    tol: float = 1e-8,
) -> Tuple[PicardTrace, Trajectory]:
    """
    Successive approximation with whole trajectories as iterates.

    w_0 = m0 and p_0 solves the full pressure equation with m0. For k >= 1,
    at every time level p_k solves the Poisson problem
    -lap p_k = S + div[(w_{k-1}.grad p_{k-1}) w_{k-1}], i.e.
    L p_k = S - C(w_{k-1}) p_{k-1} with L the Laplacian part and C the
    m (x) m part of the assembled operator, and w_k solves the linear
    parabolic problem forced by E^2 (w_{k-1}.grad p_{k-1}) grad p_{k-1}.

    Iteration stops once eta_k < tol * eta_1 or k = k_max. The returned
    trajectory is the last iterate.
    """
    if k_max < 1:
        raise DomainError(f"k_max must be at least 1, got {k_max}")
    cfg = cfg if cfg is not None else CouplingConfig()
    _check_grid(params, grid)
    times = time_levels(dt, t_end)
    step_cfg = cfg.step_config(times[1] - times[0])
    interior = grid.interior_mask()
    q = 2.0 * grid.dim
    levels = len(times)

    lap_solve = factorized(laplacian_matrix(grid).tocsc())
    S_int = params.S.interior()
    m0 = params.m0.array()
    if not np.any(m0):
        p0_int = lap_solve(S_int)
    else:
        try:
            p0_int = factorized(assemble(params.m0).matrix.tocsc())(S_int)
        except RuntimeError as e:
            raise SolverDiverged(f"factorization of the initial pressure operator failed: {e}", time=0.0)
    p0 = scatter_interior(grid, p0_int)

    W_prev = np.broadcast_to(m0, (levels,) + m0.shape).copy()
    P_prev = np.broadcast_to(p0, (levels,) + p0.shape).copy()
    a0, b0 = _iterate_bounds(grid, W_prev[:1], P_prev[:1], q)
    records = [PicardRecord(k=0, a_k=a0, b_k=b0, d_k=a0 + b0, eta_k=0.0)]
    logger.info("picard k=0: a=%.4e b=%.4e", a0, b0)

    status = Status()
    converged = False
    eta_1 = None
    last_level = levels - 1
    for k in range(1, k_max + 1):
        W = np.zeros_like(W_prev)
        P = np.zeros_like(P_prev)
        W[0] = m0
        w = params.m0
        filled = 0
        for j in range(levels):
            cross = cross_matrix(VectorField.from_array(grid, W_prev[j]))
            P[j][interior] = lap_solve(S_int - cross @ P_prev[j][interior])
        for j in range(last_level):
            t = float(times[j + 1])
            try:
                drive = activation(VectorField.from_array(grid, W_prev[j]), ScalarField(grid, P_prev[j]), params.E).array()
                if step_cfg.forcing is not None:
                    drive = drive + step_cfg.forcing(t).array()
                w = step_with_forcing(w, drive, params, step_cfg)
            except (BlowUp, NonFiniteField) as e:
                status = Status(RunStatus.BLEW_UP, t, str(e))
                break
            except SolverDiverged as e:
                raise e.at(t)
            peak = _sup_magnitude(w)
            W[j + 1] = w.array()
            filled = j + 1
            if peak > cfg.blowup_threshold:
                status = Status(RunStatus.BLEW_UP, t, f"sup|w_{k}|={peak:.6g} exceeds {cfg.blowup_threshold:.6g}")
                break
        if not status.completed:
            logger.warning("picard iterate %d blew up at t=%.6g", k, status.time)
            W_prev, P_prev = W[: filled + 1], P[: filled + 1]
            break

        a_k, b_k = _iterate_bounds(grid, W, P, q)
        eta_k = _iterate_distance(grid, W, W_prev, P, P_prev, times)
        previous = records[-1].eta_k if k >= 2 else None
        ratio = eta_k / previous if previous else None
        records.append(PicardRecord(k=k, a_k=a_k, b_k=b_k, d_k=a_k + b_k, eta_k=eta_k, ratio=ratio))
        logger.info("picard k=%d: a=%.4e b=%.4e eta=%.4e ratio=%s", k, a_k, b_k, eta_k,
                    f"{ratio:.4f}" if ratio is not None else "-")
        W_prev, P_prev = W, P

        if k == 1:
            eta_1 = eta_k
        if eta_1 == 0.0 or (k >= 2 and eta_k < tol * eta_1):
            converged = True
            break

    non_contracting = _has_streak(records)
    if non_contracting:
        logger.warning("picard iteration is not contracting: eta ratios >= 1 for %d consecutive iterates", NON_CONTRACTING_STREAK)
    trace = PicardTrace(records=records, non_contracting=non_contracting, converged=converged, b_exponent=q)

    traj = Trajectory(grid, step_cfg.dt, cfg.store_every, status=status)
    stored = len(W_prev)
    for j in range(stored):
        if j % cfg.store_every == 0 or j == stored - 1:
            traj.append(float(times[j]), VectorField.from_array(grid, W_prev[j]), ScalarField(grid, P_prev[j]))
    return trace, traj


def _has_streak(records: Sequence[PicardRecord]) -> bool:
    streak = 0
    for r in records:
        streak = streak + 1 if r.ratio is not None and r.ratio >= 1.0 else 0
        if streak >= NON_CONTRACTING_STREAK:
            return True
    return False


def elliptic_consistency(traj: Trajectory, S: ScalarField) -> float:
    """
    Largest relative residual of the full pressure equation over the
    stored levels, evaluated with each level's own conductance. For a
    zero source the absolute residual is returned.
    """
    worst = 0.0
    for snap in traj.snapshots:
        op = assemble(snap.m)
        if np.any(S.interior()):
            worst = max(worst, residual(op, snap.p, S))
        else:
            worst = max(worst, float(np.linalg.norm(op.apply(snap.p))))
    return worst


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    scale: float
    survival_time: float
    status: RunStatus
    smallness: float


class SweepResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: List[SweepRow]
    t_target: float
    bracket: Optional[Tuple[float, float]] = None

    def survival_monotone(self) -> bool:
        """Survival time non-decreasing as the scale decreases"""
        survival = [r.survival_time for r in self.rows]
        return all(b >= a for a, b in zip(survival, survival[1:]))


def smallness(params: PhysParams) -> float:
    """
    ||m0||_inf + ||S||_{2N/3} with N the grid dimension. In 1D the exponent
    is 2/3 and the second term is the quasi-norm (int |S|^q)^(1/q).
    """
    q = 2.0 * params.grid.dim / 3.0
    s_norm = integrate(np.abs(params.S.values) ** q, params.grid) ** (1.0 / q)
    return _sup_magnitude(params.m0) + s_norm


@dataclass(frozen=True)
class _SweepJob:
    params: PhysParams
    dt: float
    t_target: float
    cfg: CouplingConfig
    scale: float


def _survival(job: _SweepJob) -> Tuple[float, RunStatus]:
    params = job.params.scaled(job.scale)
    traj = run_coupled(params, params.grid, job.dt, job.t_target, job.cfg, raise_on_failure=False)
    if traj.status.completed:
        return job.t_target, traj.status.kind
    return float(traj.status.time), traj.status.kind


def _run_jobs(jobs: List[_SweepJob], workers: int) -> List[Tuple[float, RunStatus]]:
    if workers <= 1 or len(jobs) <= 1:
        return [_survival(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_survival, jobs))


def _bracket(rows: Sequence[SweepRow]) -> Optional[Tuple[float, float]]:
    """(largest surviving scale, smallest failing scale) when they are ordered"""
    failing = [r.scale for r in rows if r.status != RunStatus.COMPLETED]
    surviving = [r.scale for r in rows if r.status == RunStatus.COMPLETED]
    if not failing or not surviving:
        return None
    low = min(failing)
    below = [s for s in surviving if s < low]
    return (max(below), low) if below else None


def lifespan_sweep(
    params: PhysParams,
    grid: Grid,
    dt: float,
    t_target: float,
    scales: Sequence[float],
    cfg: Optional[CouplingConfig] = None,
    workers: int = 1,
    refine: int = 0,
) -> SweepResult:
    """
    Survival time of the coupled run with data (s m0, s S) for each scale s.

    Scales must be non-negative and sorted descending. With ``refine`` > 0
    the gap between the largest surviving and the smallest failing scale is
    bisected that many times; the extra rows are merged in.
    """
    cfg = cfg if cfg is not None else CouplingConfig()
    _check_grid(params, grid)
    scales = [float(s) for s in scales]
    if not scales:
        raise DomainError("sweep needs at least one scale")
    if any(s < 0 for s in scales):
        raise DomainError("sweep scales must be non-negative")
    if any(b > a for a, b in zip(scales, scales[1:])):
        raise DomainError("sweep scales must be sorted descending")
    base = smallness(params)

    def make_rows(batch: List[float]) -> List[SweepRow]:
        jobs = [_SweepJob(params, dt, t_target, cfg, s) for s in batch]
        rows = []
        for s, (survival, kind) in zip(batch, _run_jobs(jobs, workers)):
            rows.append(SweepRow(scale=s, survival_time=survival, status=kind, smallness=s * base))
            logger.info("sweep scale=%.6g survival=%.6g (%s)", s, survival, kind.value)
        return rows

    rows = make_rows(scales)
    for _ in range(refine):
        bracket = _bracket(rows)
        if bracket is None:
            break
        mid = 0.5 * (bracket[0] + bracket[1])
        if mid in (bracket[0], bracket[1]):
            break
        rows.extend(make_rows([mid]))
    rows.sort(key=lambda r: r.scale, reverse=True)
    result = SweepResult(rows=rows, t_target=t_target, bracket=_bracket(rows))
    if not result.survival_monotone():
        logger.warning("survival time is not monotone in the data scale")
    return result
