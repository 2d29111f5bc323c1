"""
Analyses of stored trajectories: energy identities, local means and
excess functionals, pressure oscillation, De Giorgi level sets, Hölder and
integrability monitors
"""

import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.integrate import trapezoid

from netform.coupling import Trajectory, gradient_lq_norm
from netform.elliptic import solve_pressure
from netform.errors import DomainError, EmptyBall, InsufficientSnapshots
from netform.mesh import (
    Grid,
    ScalarField,
    VectorField,
    dirichlet_energy,
    gradient,
    integrate,
    vector_dirichlet_energy,
)
from netform.parabolic import PhysParams

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.5
DEFAULT_GROWTH_RATIO = 2.0
# Default excess threshold is this multiple of the median over probes
EXCESS_MEDIAN_FACTOR = 10.0
DEFAULT_EXPONENT_GRID = tuple(np.round(np.linspace(0.05, 1.0, 20), 10))
HOLDER_STABILITY = 1.05
TIME_SLACK = 1e-12


class _Row(BaseModel):
    model_config = ConfigDict(frozen=True)


# ---------------------------------------------------------------- energy


class EnergyRow(_Row):
    time: float
    kinetic: float
    diffusion: float
    activation: float
    metabolic: float
    pressure: float
    initial: float
    work: float
    lhs: float
    rhs: float
    residual: float
    dissipation: Optional[float] = None
    second_lhs: Optional[float] = None
    second_rhs: Optional[float] = None
    second_residual: Optional[float] = None


class EnergyReport(_Row):
    rows: List[EnergyRow]

    @property
    def max_residual(self) -> float:
        return max((r.residual for r in self.rows), default=0.0)


def relative_residual(lhs: float, rhs: float, eps: float = 1e-300) -> float:
    return abs(lhs - rhs) / max(lhs, rhs, eps)


def _level_terms(m: VectorField, p: ScalarField, params: PhysParams) -> Dict[str, float]:
    """Spatial integrals entering both energy identities at one time level"""
    grid = m.grid
    mag2 = m.magnitude_squared().values
    drive = np.sum(m.array() * gradient(p).array(), axis=0)
    return {
        "mass": 0.5 * integrate(mag2, grid),
        "grad_m": vector_dirichlet_energy(m),
        "drive": integrate(drive ** 2, grid),
        "power": integrate(mag2 ** params.gamma, grid),
        "grad_p": dirichlet_energy(p),
        "work": integrate(params.S.values * p.values, grid),
    }


def _checkpoint_levels(times: np.ndarray, checkpoints: Optional[Sequence[float]]) -> List[int]:
    if checkpoints is None:
        return [len(times) - 1]
    levels = []
    for tau in checkpoints:
        if tau < -TIME_SLACK or tau > times[-1] * (1.0 + TIME_SLACK) + TIME_SLACK:
            raise DomainError(f"checkpoint {tau} lies outside the stored range [0, {times[-1]}]")
        levels.append(int(np.argmin(np.abs(times - tau))))
    return levels


def _second_identity(
    traj: Trajectory, params: PhysParams, terms: List[Dict[str, float]], level: int, p0: ScalarField
) -> Tuple[float, float, float]:
    times = traj.times
    m = traj.m_array()
    rates = [
        integrate(np.sum(((m[j + 1] - m[j]) / (times[j + 1] - times[j])) ** 2, axis=0), traj.grid)
        * (times[j + 1] - times[j])
        for j in range(level)
    ]
    dissipation = float(np.sum(rates))
    D2, E2, g = params.D ** 2, params.E ** 2, params.gamma
    at = terms[level]
    lhs = dissipation + 0.5 * D2 * at["grad_m"] + 0.5 * E2 * at["drive"] + 0.5 * E2 * at["grad_p"] + at["power"] / (2 * g)
    start = _level_terms(params.m0, p0, params)
    rhs = 0.5 * D2 * start["grad_m"] + 0.5 * E2 * start["drive"] + 0.5 * E2 * start["grad_p"] + start["power"] / (2 * g)
    return dissipation, lhs, rhs


def energy_report(
    traj: Trajectory,
    params: PhysParams,
    checkpoints: Optional[Sequence[float]] = None,
    second: bool = False,
) -> EnergyReport:
    """
    Both sides of the energy balance at each checkpoint, term by term.

    lhs = 1/2 int|m(t)|^2 + D^2 intint|grad m|^2 + E^2 intint (m.grad p)^2
          + intint |m|^(2 gamma) + 2 E^2 intint |grad p|^2
    rhs = 1/2 int|m0|^2 + 2 E^2 intint S p

    Time integrals use the trapezoid rule over stored levels, so stepwise
    storage is needed for a meaningful residual. With ``second`` the
    dissipation identity (intint |dm/dt|^2 against the start-up energy with
    p0 solved afresh) is appended.
    """
    if len(traj) < 2:
        raise InsufficientSnapshots(f"energy report needs at least 2 stored levels, got {len(traj)}")
    if not traj.is_stepwise():
        logger.warning("energy report on a subsampled trajectory (store_every=%d)", traj.store_every)
    times = traj.times
    terms = [_level_terms(s.m, s.p, params) for s in traj.snapshots]
    p0 = solve_pressure(params.m0, params.S) if second else None
    D2, E2 = params.D ** 2, params.E ** 2

    def running(key: str, level: int) -> float:
        if level == 0:
            return 0.0
        return float(trapezoid([t[key] for t in terms[: level + 1]], times[: level + 1]))

    rows = []
    for level in _checkpoint_levels(times, checkpoints):
        kinetic = terms[level]["mass"]
        diffusion = D2 * running("grad_m", level)
        activation = E2 * running("drive", level)
        metabolic = running("power", level)
        pressure = 2.0 * E2 * running("grad_p", level)
        initial = terms[0]["mass"]
        work = 2.0 * E2 * running("work", level)
        lhs = kinetic + diffusion + activation + metabolic + pressure
        rhs = initial + work
        extra = {}
        if second:
            dissipation, lhs2, rhs2 = _second_identity(traj, params, terms, level, p0)
            extra = dict(dissipation=dissipation, second_lhs=lhs2, second_rhs=rhs2,
                         second_residual=relative_residual(lhs2, rhs2))
        row = EnergyRow(
            time=float(times[level]), kinetic=kinetic, diffusion=diffusion, activation=activation,
            metabolic=metabolic, pressure=pressure, initial=initial, work=work,
            lhs=lhs, rhs=rhs, residual=relative_residual(lhs, rhs), **extra,
        )
        logger.info("energy at t=%.6g: lhs=%.6e rhs=%.6e residual=%.3e", row.time, lhs, rhs, row.residual)
        rows.append(row)
    return EnergyReport(rows=rows)


# ---------------------------------------------------------------- local means


def _ball(grid: Grid, center: Sequence[float], radius: float) -> Tuple[np.ndarray, bool]:
    """Node mask of B_r(y) within the domain and whether the ball was clipped"""
    if len(center) != grid.dim:
        raise DomainError(f"point {tuple(center)} does not have {grid.dim} coordinates")
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    mask = grid.ball_mask(center, radius)
    if not np.any(mask):
        raise EmptyBall(f"no grid node within {radius} of {tuple(center)}")
    clipped = any(
        c - radius < o or c + radius > o + L for c, o, L in zip(center, grid.origin, grid.extent)
    )
    return mask, clipped


def _window(times: np.ndarray, tau: float, radius: float) -> Tuple[np.ndarray, float, bool]:
    lo, hi = tau - 0.5 * radius ** 2, tau + 0.5 * radius ** 2
    levels = np.nonzero((times >= lo - TIME_SLACK) & (times <= hi + TIME_SLACK))[0]
    clipped = lo < times[0] or hi > times[-1]
    length = min(hi, times[-1]) - max(lo, times[0])
    return levels, max(length, 0.0), clipped


def ball_means(traj: Trajectory, y: Sequence[float], radius: float) -> np.ndarray:
    """m_{y,r}(t) for every stored level, shape (levels, dim)"""
    mask, _ = _ball(traj.grid, y, radius)
    w = traj.grid.cell_volumes()[mask]
    m = traj.m_array()[:, :, mask]
    return np.sum(m * w, axis=-1) / np.sum(w)


class ExcessRow(_Row):
    y: Tuple[float, ...]
    tau: float
    r: float
    m_mean: Tuple[float, ...]
    p_mean: Tuple[float, ...]
    a_r: float
    e_r: float
    clipped: bool


class ExcessReport(_Row):
    rows: List[ExcessRow]

    def excess(self) -> List[float]:
        return [row.e_r for row in self.rows]


def excess(
    traj: Trajectory,
    z: Tuple[Sequence[float], float],
    radii: Sequence[float],
    beta: float = DEFAULT_BETA,
) -> ExcessReport:
    """
    E_r(z) = r^-(N+2) int_Q |m - m_{z,r}|^2 + A_r(z) + r^(2 beta), with
    A_r(z) = r^-N max_t int_B (p - p_{y,r}(t))^2 over the levels of the
    window [tau - r^2/2, tau + r^2/2]. Balls and cylinders are clipped to
    the domain; the cylinder mean averages the stored levels in the window.
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    y, tau = tuple(float(c) for c in z[0]), float(z[1])
    grid = traj.grid
    if not grid.contains(y):
        raise DomainError(f"probe {y} lies outside the domain")
    times = traj.times
    if tau < 0 or tau > times[-1] * (1.0 + TIME_SLACK):
        raise DomainError(f"probe time {tau} lies outside [0, {times[-1]}]")
    N = grid.dim
    volumes = grid.cell_volumes()
    m_all = traj.m_array()
    p_all = traj.p_array()

    rows = []
    for r in radii:
        r = float(r)
        mask, ball_clipped = _ball(grid, y, r)
        levels, length, time_clipped = _window(times, tau, r)
        if levels.size == 0:
            raise InsufficientSnapshots(f"no stored level within r^2/2={0.5 * r * r:.3g} of t={tau}")
        w = volumes[mask]
        ball = np.sum(w)
        m_cyl = m_all[levels][:, :, mask]
        p_ball = p_all[:, mask]

        m_mean = np.sum(m_cyl * w, axis=-1).mean(axis=0) / ball
        spread = np.sum((m_cyl - m_mean[None, :, None]) ** 2, axis=1)
        m_term = length * float(np.mean(np.sum(spread * w, axis=-1))) / r ** (N + 2)

        p_mean = np.sum(p_ball * w, axis=-1) / ball
        p_spread = np.sum((p_ball[levels] - p_mean[levels, None]) ** 2 * w, axis=-1)
        a_r = float(np.max(p_spread)) / r ** N

        rows.append(ExcessRow(
            y=y, tau=tau, r=r, m_mean=tuple(float(v) for v in m_mean),
            p_mean=tuple(float(v) for v in p_mean), a_r=a_r,
            e_r=m_term + a_r + r ** (2.0 * beta), clipped=ball_clipped or time_clipped,
        ))
    return ExcessReport(rows=rows)


# ---------------------------------------------------------------- oscillation


class OscillationReport(_Row):
    y: Tuple[float, ...]
    radii: List[float]
    delta: List[float]
    beta_hat: Optional[float] = None
    constant: Optional[float] = None
    fit_skipped: bool = False


def oscillation(traj: Trajectory, y: Sequence[float], radii: Sequence[float]) -> OscillationReport:
    """
    delta_r(y) = max over stored t of (max - min of p on B_r(y)), with a
    least-squares fit of log delta_r = log c + beta log r.
    """
    if len(radii) < 3:
        raise DomainError(f"oscillation fit needs at least 3 radii, got {len(radii)}")
    p_all = traj.p_array()
    delta = []
    for r in radii:
        mask, _ = _ball(traj.grid, y, float(r))
        values = p_all[:, mask]
        delta.append(float(np.max(values.max(axis=1) - values.min(axis=1))))

    r_arr = np.asarray(radii, dtype=np.float64)
    d_arr = np.asarray(delta)
    positive = d_arr > 0
    report = dict(y=tuple(float(c) for c in y), radii=[float(r) for r in radii], delta=delta)
    if positive.sum() < 2 or np.unique(r_arr[positive]).size < 2:
        return OscillationReport(**report, fit_skipped=True)
    slope, intercept = np.polyfit(np.log(r_arr[positive]), np.log(d_arr[positive]), 1)
    return OscillationReport(**report, beta_hat=float(slope), constant=float(np.exp(intercept)))


# ---------------------------------------------------------------- regularity


class Classification(str, Enum):
    REGULAR = "regular_candidate"
    SINGULAR = "singular_candidate"


class RegularityRow(_Row):
    y: Tuple[float, ...]
    tau: float
    min_excess: float
    max_mean: float
    con1: float
    con2: float
    con1_ratio: Optional[float] = None
    con2_ratio: Optional[float] = None
    excess_flag: bool
    growth_flag: bool
    classification: Classification


class RegularityThresholds(_Row):
    excess: Optional[float] = None
    growth_ratio: float = DEFAULT_GROWTH_RATIO


def _growth(values: Sequence[float]) -> Optional[float]:
    """Proxy at the smallest radius over the proxy at the next one"""
    small, next_small = values[0], values[1]
    if next_small > 0:
        return small / next_small
    return None if small == 0 else float("inf")


def _probe_record(traj: Trajectory, z, radii: Sequence[float], beta: float):
    y, tau = z
    report = excess(traj, z, radii, beta)
    grid = traj.grid
    N = grid.dim
    volumes = grid.cell_volumes()
    grads = [gradient(s.m.components[a]).magnitude_squared().values for s in traj.snapshots for a in range(N)]
    grad_m2 = np.sum(np.reshape(grads, (len(traj), N) + grid.shape), axis=1)
    con1, con2 = [], []
    for r in radii:
        means = ball_means(traj, y, r)
        con1.append(float(np.max(np.linalg.norm(means, axis=1))))
        mask, _ = _ball(grid, y, r)
        energy = np.sum(grad_m2[:, mask] * volumes[mask], axis=-1)
        con2.append(float(np.max(energy)) / r ** (N - 2))
    max_mean = max(float(np.linalg.norm(row.m_mean)) for row in report.rows)
    return min(report.excess()), max_mean, con1, con2


def regularity_scan(
    traj: Trajectory,
    probes: Sequence[Tuple[Sequence[float], float]],
    radii: Sequence[float],
    thresholds: Optional[RegularityThresholds] = None,
    beta: float = DEFAULT_BETA,
) -> List[RegularityRow]:
    """
    Classify each probe z = (y, tau).

    A probe is a singular candidate when min_r E_r(z) exceeds the excess
    threshold, and also when either of max_t |m_{y,r}(t)| and
    r^-(N-2) max_t int_{B_r} |grad m|^2 grows by more than the growth ratio
    between the two smallest radii. Every probe receives a class.
    """
    if len(radii) < 2:
        raise DomainError("regularity scan needs at least two radii")
    thresholds = thresholds if thresholds is not None else RegularityThresholds()
    radii = sorted(float(r) for r in radii)
    records = [_probe_record(traj, z, radii, beta) for z in probes]
    if thresholds.excess is not None:
        excess_threshold = thresholds.excess
    else:
        excess_threshold = EXCESS_MEDIAN_FACTOR * float(np.median([r[0] for r in records])) if records else np.inf

    rows = []
    for z, (min_excess, max_mean, con1, con2) in zip(probes, records):
        ratios = (_growth(con1), _growth(con2))
        growth_flag = any(g is not None and g > thresholds.growth_ratio for g in ratios)
        excess_flag = min_excess > excess_threshold
        singular = excess_flag or growth_flag
        rows.append(RegularityRow(
            y=tuple(float(c) for c in z[0]), tau=float(z[1]), min_excess=min_excess, max_mean=max_mean,
            con1=con1[0], con2=con2[0], con1_ratio=ratios[0], con2_ratio=ratios[1],
            excess_flag=excess_flag, growth_flag=growth_flag,
            classification=Classification.SINGULAR if singular else Classification.REGULAR,
        ))
    flagged = sum(r.classification == Classification.SINGULAR for r in rows)
    logger.info("regularity scan: %d of %d probes flagged", flagged, len(rows))
    return rows


# ---------------------------------------------------------------- level sets


class LevelRow(_Row):
    n: int
    k_n: float
    y_n: float
    ratio: Optional[float] = None


class DeGiorgiLevels(_Row):
    k: float
    M: float
    rows: List[LevelRow]

    @property
    def y(self) -> List[float]:
        return [r.y_n for r in self.rows]


def time_weights(times: np.ndarray) -> np.ndarray:
    """Trapezoid weights over the stored levels"""
    if len(times) < 2:
        return np.zeros(len(times))
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def degiorgi_levels(traj: Trajectory, k: float, n_max: int = 30) -> DeGiorgiLevels:
    """
    y_n = space-time measure of {|m|^2 > k_n} with k_n = k - k/2^n + M and
    M = sup |m0|^2; ratio is y_{n+1} / y_n^(1 + 2/N).
    """
    if not k > 0:
        raise DomainError(f"level k must be positive, got {k}")
    grid = traj.grid
    mag2 = np.sum(traj.m_array() ** 2, axis=1)
    M = float(np.max(mag2[0]))
    weights = np.multiply.outer(time_weights(traj.times), grid.cell_volumes())
    exponent = 1.0 + 2.0 / grid.dim

    measures = []
    for n in range(n_max + 1):
        k_n = k - k / 2.0 ** n + M
        measures.append((k_n, float(np.sum(weights[mag2 > k_n]))))
    rows = []
    for n, (k_n, y_n) in enumerate(measures):
        ratio = None
        if n < n_max and y_n > 0:
            ratio = measures[n + 1][1] / y_n ** exponent
        rows.append(LevelRow(n=n, k_n=k_n, y_n=y_n, ratio=ratio))
    return DeGiorgiLevels(k=float(k), M=M, rows=rows)


# ---------------------------------------------------------------- hölder / integrability


class HolderEstimate(_Row):
    beta: Optional[float] = None
    seminorm: Optional[float] = None
    seminorms: Dict[float, float]


def _holder_seminorms(grid: Grid, times, values, exponents, nodes, levels, rng, pairs) -> np.ndarray:
    coords = np.stack([x.ravel() for x in grid.mesh()], axis=1)
    i1 = rng.integers(0, nodes, pairs)
    i2 = rng.integers(0, nodes, pairs)
    t1 = rng.integers(0, levels, pairs)
    t2 = rng.integers(0, levels, pairs)
    dist = np.linalg.norm(coords[i1] - coords[i2], axis=1) + np.sqrt(np.abs(times[t1] - times[t2]))
    keep = dist > 0
    jump = np.abs(values[t1, i1] - values[t2, i2])[keep]
    dist = dist[keep]
    if jump.size == 0:
        return np.zeros(len(exponents))
    return np.array([float(np.max(jump / dist ** b)) for b in exponents])


def holder_estimate(
    times: Sequence[float],
    fields: Sequence[ScalarField],
    exponent_grid: Sequence[float] = DEFAULT_EXPONENT_GRID,
    pairs: int = 4000,
    seed: int = 0,
) -> HolderEstimate:
    """
    Empirical parabolic Hölder exponent of a field sequence.

    Seminorms sup |f(x1,t1) - f(x2,t2)| / (|x1 - x2| + |t1 - t2|^(1/2))^b are
    sampled on ``pairs`` random pairs and again on twice as many; the
    estimate is the largest b whose seminorm grows by at most 5% under the
    doubling.
    """
    if len(fields) < 2 or len(fields) != len(times):
        raise InsufficientSnapshots("Hölder estimate needs at least 2 time levels with matching times")
    exponents = sorted(float(b) for b in exponent_grid)
    if not exponents or exponents[0] <= 0:
        raise DomainError("Hölder exponents must be positive")
    grid = fields[0].grid
    values = np.stack([f.flat() for f in fields])
    times = np.asarray(times, dtype=np.float64)
    rng = np.random.default_rng(seed)
    args = (grid, times, values, exponents, grid.size, len(fields))
    first = _holder_seminorms(*args, rng, pairs)
    extra = _holder_seminorms(*args, rng, pairs)
    doubled = np.maximum(first, extra)

    stable = [b for b, s1, s2 in zip(exponents, first, doubled) if s2 <= HOLDER_STABILITY * s1]
    seminorms = {b: float(s) for b, s in zip(exponents, doubled)}
    if not stable:
        return HolderEstimate(seminorms=seminorms)
    best = max(stable)
    return HolderEstimate(beta=best, seminorm=seminorms[best], seminorms=seminorms)


class LpRow(_Row):
    time: float
    n: float
    integral: float


def lp_growth(traj: Trajectory, exponents: Sequence[float]) -> List[LpRow]:
    """int |m|^(2n) at every stored level, time-major"""
    if any(n < 1 for n in exponents):
        raise DomainError("higher integrability exponents must be >= 1")
    rows = []
    for snap in traj.snapshots:
        mag2 = snap.m.magnitude_squared().values
        for n in exponents:
            rows.append(LpRow(time=snap.time, n=float(n), integral=integrate(mag2 ** n, traj.grid)))
    return rows


class IntegrabilityRow(_Row):
    time: float
    sup_m: float
    q: float
    grad_p_norm: float


def integrability_monitor(traj: Trajectory, qs: Sequence[float] = (2.0, 4.0)) -> List[IntegrabilityRow]:
    """
    sup|m| next to ||grad p||_q at every stored level; in two dimensions the
    two stay bounded together.
    """
    if any(q < 1 for q in qs):
        raise DomainError("integrability exponents must be >= 1")
    rows = []
    for snap in traj.snapshots:
        sup_m = float(np.sqrt(np.max(snap.m.magnitude_squared().values)))
        for q in qs:
            rows.append(IntegrabilityRow(time=snap.time, sup_m=sup_m, q=float(q), grad_p_norm=gradient_lq_norm(snap.p, q)))
    return rows
