"""
Recursive-inequality utilities: the geometric level-set recursion, the
perturbed bound recursion of the lagged scheme, and the reading of Picard
traces against both
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from netform.coupling import PicardTrace
from netform.errors import DomainError, TooShortTrace
from netform.parabolic import monotonicity_gap

logger = logging.getLogger(__name__)

OVERFLOW_LIMIT = 1e300


@dataclass(frozen=True)
class GeometricRecursion:
    """y_{n+1} <= c b^n y_n^(1 + alpha)"""

    c: float
    b: float
    alpha: float

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"c must be positive, got {self.c}")
        if not self.b > 1:
            raise DomainError(f"b must exceed 1, got {self.b}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class PerturbedRecursion:
    """b_k <= b0 + lambda b_{k-1}^(1 + alpha)"""

    b0: float
    lam: float
    alpha: float

    def __post_init__(self):
        if not self.b0 >= 0:
            raise DomainError(f"b0 must be non-negative, got {self.b0}")
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


class RecursionSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: List[float]
    overflow: bool = False

    @property
    def last(self) -> float:
        return self.values[-1]


class SmallCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    applies: bool
    bound: Optional[float] = None


class PicardInterpretation(BaseModel):
    model_config = ConfigDict(frozen=True)

    plateau_ok: bool
    contraction_ratio: float
    d_max: float
    plateau_bound: float
    non_contracting: bool


def ynb_threshold(r: GeometricRecursion) -> float:
    """c^(-1/alpha) b^(-1/alpha^2)"""
    return r.c ** (-1.0 / r.alpha) * r.b ** (-1.0 / r.alpha ** 2)


def _iterate(step, start: float, n_max: int) -> RecursionSequence:
    values = [float(start)]
    for n in range(n_max):
        try:
            nxt = step(n, values[-1])
        except OverflowError:
            return RecursionSequence(values=values, overflow=True)
        if not math.isfinite(nxt) or nxt > OVERFLOW_LIMIT:
            return RecursionSequence(values=values, overflow=True)
        values.append(nxt)
    return RecursionSequence(values=values)


def ynb_iterate(r: GeometricRecursion, y0: float, n_max: int = 200) -> RecursionSequence:
    """
    Equality dynamics y_{n+1} = c b^n y_n^(1 + alpha), the extremal case of
    the recursion. Stops with the overflow flag once a value passes 1e300.
    """
    if y0 < 0:
        raise DomainError(f"y0 must be non-negative, got {y0}")
    return _iterate(lambda n, y: r.c * r.b ** n * y ** (1.0 + r.alpha), y0, n_max)


def ynb_envelope(r: GeometricRecursion, y0: float, n: int) -> float:
    """
    Closed-form bound
    y_n <= T (y0 / T)^((1 + alpha)^n) b^(-n/alpha), T = ynb_threshold(r),
    evaluated in logarithms. Below the threshold it is at most y0 b^(-n/alpha).
    """
    if y0 == 0:
        return 0.0
    threshold = ynb_threshold(r)
    gap = math.log(y0) - math.log(threshold)
    if gap == 0.0:
        log_value = math.log(threshold) - n * math.log(r.b) / r.alpha
    else:
        # (1 + alpha)^n |gap| kept in logs
        log_amplified = n * math.log1p(r.alpha) + math.log(abs(gap))
        if log_amplified > math.log(OVERFLOW_LIMIT):
            return 0.0 if gap < 0 else math.inf
        log_value = math.log(threshold) + math.copysign(math.exp(log_amplified), gap) - n * math.log(r.b) / r.alpha
    if log_value > math.log(OVERFLOW_LIMIT):
        return math.inf
    return math.exp(log_value)


def small_check(r: PerturbedRecursion) -> SmallCheck:
    """Gate 2 lambda (2 b0)^alpha < 1 and the bound b0 / (1 - lambda (2 b0)^alpha)"""
    growth = r.lam * (2.0 * r.b0) ** r.alpha
    if not 2.0 * growth < 1.0:
        return SmallCheck(applies=False)
    return SmallCheck(applies=True, bound=r.b0 / (1.0 - growth))


def perturbed_iterate(r: PerturbedRecursion, k_max: int = 100) -> RecursionSequence:
    """Equality dynamics b_k = b0 + lambda b_{k-1}^(1 + alpha) from b_0 = b0"""
    return _iterate(lambda _, b: r.b0 + r.lam * b ** (1.0 + r.alpha), r.b0, k_max)


def interpret_picard(trace: PicardTrace) -> PicardInterpretation:
    """
    plateau_ok: max_k d_k <= 2 (d_0 + d_1).
    contraction_ratio: geometric mean of eta_{k+1} / eta_k over the tail,
    leaving out eta_2 / eta_1 when later ratios exist; 0 when the etas vanish.
    """
    if len(trace.records) < 3:
        raise TooShortTrace(f"interpretation needs at least 3 records, got {len(trace.records)}")
    d = [r.d_k for r in trace.records]
    bound = 2.0 * (d[0] + d[1])
    d_max = max(d)
    plateau_ok = d_max <= bound

    ratios = [r.ratio for r in trace.records if r.ratio is not None]
    if len(ratios) >= 2:
        ratios = ratios[1:]
    if not ratios or min(ratios) == 0.0:
        contraction = 0.0
    else:
        contraction = float(np.exp(np.mean(np.log(ratios))))
    if not plateau_ok:
        logger.info("d_k leaves the plateau bound: max %.4e > %.4e", d_max, bound)
    return PicardInterpretation(
        plateau_ok=plateau_ok,
        contraction_ratio=contraction,
        d_max=d_max,
        plateau_bound=bound,
        non_contracting=trace.non_contracting,
    )


class GapCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    samples: int
    min_scaled_gap: float
    violations: int


def plap_check(samples: int, gamma_lo: float = 0.6, gamma_hi: float = 3.0, dim: int = 2, seed: int = 0) -> GapCheck:
    """
    Draw random (x, y, gamma) and evaluate the monotonicity gap scaled by
    (1 + |x| + |y|)^(2 gamma); a violation is a scaled gap below -1e-12.
    """
    if samples < 1:
        raise DomainError("plap check needs at least one sample")
    if not 0.5 < gamma_lo <= gamma_hi:
        raise DomainError(f"gamma range must lie in (1/2, inf), got [{gamma_lo}, {gamma_hi}]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, dim)) * rng.exponential(1.0, (samples, 1))
    y = rng.standard_normal((samples, dim)) * rng.exponential(1.0, (samples, 1))
    gamma = rng.uniform(gamma_lo, gamma_hi, samples)
    gap = monotonicity_gap(x, y, gamma)
    scale = (1.0 + np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)) ** (2.0 * gamma)
    scaled = gap / scale
    return GapCheck(samples=samples, min_scaled_gap=float(scaled.min()), violations=int(np.sum(scaled < -1e-12)))
