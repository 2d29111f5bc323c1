"""
CSV report writers. One header row per file, floats with 17 significant
digits, missing values as nan
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from netform.analysis import RecursionSequence
from netform.coupling import PicardTrace, SweepResult
from netform.diagnostics import (
    DeGiorgiLevels,
    EnergyReport,
    ExcessReport,
    HolderEstimate,
    IntegrabilityRow,
    LpRow,
    OscillationReport,
    RegularityRow,
)
from netform.errors import SnapshotIOError

logger = logging.getLogger(__name__)

ENERGY_COLUMNS = [
    "time", "kinetic", "diffusion", "activation", "metabolic", "pressure", "initial", "work",
    "lhs", "rhs", "residual", "dissipation", "second_lhs", "second_rhs", "second_residual",
]
PICARD_COLUMNS = ["k", "a_k", "b_k", "d_k", "eta_k", "ratio"]
SWEEP_COLUMNS = ["scale", "survival_time", "status", "smallness"]
LEVEL_COLUMNS = ["n", "k_n", "y_n", "ratio"]
LP_COLUMNS = ["time", "n", "integral"]
INTEGRABILITY_COLUMNS = ["time", "q", "sup_m", "grad_p_norm"]
HOLDER_COLUMNS = ["exponent", "seminorm", "selected"]


def fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]):
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
    except OSError as e:
        raise SnapshotIOError(f"cannot write report {path}: {e}")


def _axes(prefix: str, dim: int) -> List[str]:
    return [f"{prefix}_{a}" for a in range(dim)]


def energy_rows(report: Optional[EnergyReport]):
    if report is None:
        return []
    return [[getattr(row, c) for c in ENERGY_COLUMNS] for row in report.rows]


def excess_rows(reports: Sequence[ExcessReport]):
    """Probe-major, radius-minor"""
    for probe, report in enumerate(reports):
        for row in report.rows:
            yield [probe, *row.y, row.tau, row.r, *row.m_mean, row.a_r, row.e_r, row.clipped]


def oscillation_rows(reports: Sequence[OscillationReport]):
    for probe, report in enumerate(reports):
        for r, delta in zip(report.radii, report.delta):
            yield [probe, *report.y, r, delta, report.beta_hat, report.constant, report.fit_skipped]


def picard_rows(trace: Optional[PicardTrace]):
    if trace is None:
        return []
    return [[r.k, r.a_k, r.b_k, r.d_k, r.eta_k, r.ratio] for r in trace.records]


def sweep_rows(result: Optional[SweepResult]):
    if result is None:
        return []
    rows = sorted(result.rows, key=lambda r: r.scale, reverse=True)
    return [[r.scale, r.survival_time, r.status, r.smallness] for r in rows]


def level_rows(levels: Optional[DeGiorgiLevels]):
    if levels is None:
        return []
    return [[r.n, r.k_n, r.y_n, r.ratio] for r in levels.rows]


def holder_rows(estimate: Optional[HolderEstimate]):
    if estimate is None:
        return []
    return [[b, s, b == estimate.beta] for b, s in sorted(estimate.seminorms.items())]


def regularity_rows(rows: Sequence[RegularityRow]):
    for probe, row in enumerate(rows):
        yield [probe, *row.y, row.tau, row.min_excess, row.max_mean, row.con1, row.con2,
               row.con1_ratio, row.con2_ratio, row.classification]


@dataclass
class ReportBundle:
    """Everything a command produced; absent parts give header-only files"""

    dim: int
    energy: Optional[EnergyReport] = None
    excess: List[ExcessReport] = field(default_factory=list)
    oscillation: List[OscillationReport] = field(default_factory=list)
    picard: Optional[PicardTrace] = None
    sweep: Optional[SweepResult] = None
    levels: Optional[DeGiorgiLevels] = None
    regularity: List[RegularityRow] = field(default_factory=list)
    lp_growth: List[LpRow] = field(default_factory=list)
    integrability: List[IntegrabilityRow] = field(default_factory=list)
    holder: Optional[HolderEstimate] = None


def emit_reports(out_dir, bundle: ReportBundle) -> List[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SnapshotIOError(f"cannot create report directory {out}: {e}")
    y = _axes("y", bundle.dim)
    tables = [
        ("energy.csv", ENERGY_COLUMNS, energy_rows(bundle.energy)),
        ("excess.csv", ["probe", *y, "tau", "r", *_axes("m_mean", bundle.dim), "a_r", "e_r", "clipped"],
         excess_rows(bundle.excess)),
        ("oscillation.csv", ["probe", *y, "r", "delta", "beta_hat", "constant", "fit_skipped"],
         oscillation_rows(bundle.oscillation)),
        ("picard_trace.csv", PICARD_COLUMNS, picard_rows(bundle.picard)),
        ("sweep.csv", SWEEP_COLUMNS, sweep_rows(bundle.sweep)),
        ("levels.csv", LEVEL_COLUMNS, level_rows(bundle.levels)),
        ("regularity.csv", ["probe", *y, "tau", "min_excess", "max_mean", "con1", "con2",
                            "con1_ratio", "con2_ratio", "classification"], regularity_rows(bundle.regularity)),
        ("lp_growth.csv", LP_COLUMNS, [[r.time, r.n, r.integral] for r in bundle.lp_growth]),
        ("integrability.csv", INTEGRABILITY_COLUMNS,
         [[r.time, r.q, r.sup_m, r.grad_p_norm] for r in bundle.integrability]),
        ("holder.csv", HOLDER_COLUMNS, holder_rows(bundle.holder)),
    ]
    written = []
    for name, header, rows in tables:
        write_csv(out / name, header, rows)
        written.append(out / name)
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def format_sequence(seq: RecursionSequence) -> str:
    """One value per line for standard output"""
    lines = [f"{n} {fmt(float(v))}" for n, v in enumerate(seq.values)]
    if seq.overflow:
        lines.append("overflow")
    return "\n".join(lines)
