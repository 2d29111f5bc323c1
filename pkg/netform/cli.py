"""
Command-line surface.

    netform run --config exp.cfg --out results/
    netform picard --config exp.cfg --out results/
    netform sweep --config exp.cfg --out results/ --workers 4
    netform diagnose --config exp.cfg --traj results/trajectory --out results/
    netform lemma-check ynb --c 1 --b 2 --alpha 1 --y0 0.5

Exit codes: 0 success, 2 invalid configuration or input, 3 solver failure,
4 blow-up (a sweep records blow-up as data and exits 0).
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from netform import analysis, diagnostics
from netform.config import ExperimentConfig, build_params, load_config
from netform.coupling import RunStatus, Trajectory, lifespan_sweep, run_coupled, run_picard
from netform.errors import (
    BlowUp,
    ConfigParseError,
    ConfigValidationError,
    DomainError,
    EmptyBall,
    FormatError,
    InsufficientSnapshots,
    NetformError,
    NonFiniteField,
    SnapshotIOError,
    SolverDiverged,
    TooShortTrace,
)
from netform.parabolic import PhysParams
from netform.reports import ReportBundle, emit_reports, fmt, format_sequence
from netform.snapshots import read_trajectory, write_trajectory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BLOWUP = 4
TRAJECTORY_DIR = "trajectory"


def setup_logging(level: str = "info"):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
    root = logging.getLogger("netform")
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    root.propagate = False


def _common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", required=config_required, help="Experiment configuration file")
    parser.add_argument("--out", default="results", help="Output directory")
    parser.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"], help="Verbosity on stderr"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netform",
        description="Numerical experiments for the conductance-pressure network formation system",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiment mode named in the config")
    _common(run)
    picard = commands.add_parser("picard", help="Successive approximation with per-iterate diagnostics")
    _common(picard)
    sweep = commands.add_parser("sweep", help="Life-span sweep over data scales")
    _common(sweep)
    sweep.add_argument("--workers", type=int, default=None, help="Worker processes (default: config, then CPU count)")
    diagnose = commands.add_parser("diagnose", help="Energy, excess, oscillation and level-set reports")
    _common(diagnose)
    diagnose.add_argument("--traj", default=None, help="Trajectory directory (default: solve from the config)")

    lemma = commands.add_parser("lemma-check", help="Check the recursive inequalities and the monotonicity lemma")
    checks = lemma.add_subparsers(dest="lemma", required=True)
    ynb = checks.add_parser("ynb", help="y_{n+1} <= c b^n y_n^(1+alpha)")
    _common(ynb, config_required=False)
    ynb.add_argument("--c", type=float, required=True)
    ynb.add_argument("--b", type=float, required=True)
    ynb.add_argument("--alpha", type=float, required=True)
    ynb.add_argument("--y0", type=float, required=True)
    ynb.add_argument("--n-max", type=int, default=30)
    small = checks.add_parser("small", help="b_k <= b0 + lambda b_{k-1}^(1+alpha)")
    _common(small, config_required=False)
    small.add_argument("--b0", type=float, required=True)
    small.add_argument("--lam", type=float, required=True)
    small.add_argument("--alpha", type=float, required=True)
    small.add_argument("--k-max", type=int, default=100)
    plap = checks.add_parser("plap", help="Monotonicity of x -> |x|^(2 gamma - 2) x")
    _common(plap, config_required=False)
    plap.add_argument("--samples", type=int, default=100000)
    plap.add_argument("--gamma-lo", type=float, default=0.6)
    plap.add_argument("--gamma-hi", type=float, default=3.0)
    plap.add_argument("--dim", type=int, default=2)
    plap.add_argument("--seed", type=int, default=0)
    return parser


def _load(path: str):
    cfg = load_config(path)
    params = build_params(cfg, base_dir=Path(path).parent)
    return cfg, params


def _exit_for(traj: Trajectory) -> int:
    if traj.status.kind == RunStatus.BLEW_UP:
        logger.warning("blow-up at t=%s: %s", fmt(traj.status.time), traj.status.message)
        return EXIT_BLOWUP
    if traj.status.kind == RunStatus.SOLVER_FAILED:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, params: PhysParams, out: Path, workers: Optional[int] = None) -> int:
    mode = cfg.experiment.mode
    if mode == "picard":
        return cmd_picard(cfg, params, out)
    if mode == "sweep":
        return cmd_sweep(cfg, params, out, workers)
    s = cfg.stepping
    traj = run_coupled(params, params.grid, s.dt, s.t_end, cfg.coupling_config())
    write_trajectory(out / TRAJECTORY_DIR, traj)
    bundle = ReportBundle(dim=params.grid.dim)
    if len(traj) >= 2:
        bundle.energy = diagnostics.energy_report(traj, params, cfg.diagnostics.checkpoints)
    bundle.integrability = diagnostics.integrability_monitor(traj, cfg.diagnostics.integrability_q)
    emit_reports(out, bundle)
    return _exit_for(traj)


def cmd_picard(cfg: ExperimentConfig, params: PhysParams, out: Path) -> int:
    s, e = cfg.stepping, cfg.experiment
    trace, traj = run_picard(params, params.grid, s.dt, s.t_end, e.k_max, cfg.coupling_config(), tol=e.picard_tol)
    write_trajectory(out / TRAJECTORY_DIR, traj)
    emit_reports(out, ReportBundle(dim=params.grid.dim, picard=trace))
    try:
        reading = analysis.interpret_picard(trace)
        logger.info(
            "picard: contraction ratio %.4g, plateau %s (max d_k %.4g, bound %.4g)",
            reading.contraction_ratio,
            "ok" if reading.plateau_ok else "exceeded",
            reading.d_max,
            reading.plateau_bound,
        )
    except TooShortTrace as e:
        logger.info("picard trace too short to interpret: %s", e)
    if trace.non_contracting:
        logger.warning("picard iteration is not contracting at this data size")
    return _exit_for(traj)


def cmd_sweep(cfg: ExperimentConfig, params: PhysParams, out: Path, workers: Optional[int] = None) -> int:
    workers = workers or cfg.experiment.workers or os.cpu_count() or 1
    result = lifespan_sweep(
        params,
        params.grid,
        cfg.stepping.dt,
        cfg.t_target,
        cfg.experiment.scales,
        cfg.coupling_config(),
        workers=workers,
        refine=cfg.experiment.refine,
    )
    emit_reports(out, ReportBundle(dim=params.grid.dim, sweep=result))
    return EXIT_OK


def _default_probe(traj: Trajectory):
    grid = traj.grid
    center = tuple(o + 0.5 * L for o, L in zip(grid.origin, grid.extent))
    # stored level closest to the middle of the run
    times = traj.times
    return center, float(times[int(np.argmin(np.abs(times - 0.5 * times[-1])))])


def cmd_diagnose(cfg: ExperimentConfig, params: PhysParams, out: Path, traj_dir: Optional[str]) -> int:
    d = cfg.diagnostics
    if traj_dir is not None:
        traj = read_trajectory(traj_dir)
    else:
        traj = run_coupled(params, params.grid, cfg.stepping.dt, cfg.stepping.t_end, cfg.coupling_config())
        write_trajectory(out / TRAJECTORY_DIR, traj)
    if traj.grid != params.grid:
        raise DomainError(f"trajectory grid {traj.grid.n} differs from the config grid {params.grid.n}")

    bundle = ReportBundle(dim=traj.grid.dim)
    try:
        bundle.energy = diagnostics.energy_report(traj, params, d.checkpoints, second=d.second_energy)
    except InsufficientSnapshots as e:
        logger.warning("energy report skipped: %s", e)

    probes = [(tuple(y), tau) for y, tau in d.probes] or [_default_probe(traj)]
    bundle.excess = [diagnostics.excess(traj, z, d.radii, d.beta) for z in probes]
    if len(d.radii) >= 3:
        bundle.oscillation = [diagnostics.oscillation(traj, y, d.radii) for y, _ in probes]
    else:
        logger.warning("oscillation fit skipped: %d radii configured, 3 needed", len(d.radii))
    thresholds = diagnostics.RegularityThresholds(excess=d.excess_threshold, growth_ratio=d.growth_ratio)
    bundle.regularity = diagnostics.regularity_scan(traj, probes, d.radii, thresholds, d.beta)

    peak = float(np.max(np.sum(traj.m_array() ** 2, axis=1)))
    k = d.degiorgi_k or (peak if peak > 0 else 1.0)
    bundle.levels = diagnostics.degiorgi_levels(traj, k, d.n_levels)
    bundle.lp_growth = diagnostics.lp_growth(traj, d.lp_exponents)
    bundle.integrability = diagnostics.integrability_monitor(traj, d.integrability_q)
    if len(traj) >= 2:
        bundle.holder = diagnostics.holder_estimate(
            traj.times, [s.p for s in traj.snapshots], pairs=d.holder_pairs, seed=cfg.experiment.seed
        )
    emit_reports(out, bundle)
    return EXIT_OK


def cmd_lemma(args) -> int:
    if args.lemma == "ynb":
        r = analysis.GeometricRecursion(c=args.c, b=args.b, alpha=args.alpha)
        print(f"threshold {fmt(analysis.ynb_threshold(r))}")
        print(format_sequence(analysis.ynb_iterate(r, args.y0, args.n_max)))
    elif args.lemma == "small":
        r = analysis.PerturbedRecursion(b0=args.b0, lam=args.lam, alpha=args.alpha)
        check = analysis.small_check(r)
        print(f"applies {fmt(check.applies)}")
        print(f"bound {fmt(check.bound)}")
        print(format_sequence(analysis.perturbed_iterate(r, args.k_max)))
    else:
        gap = analysis.plap_check(args.samples, args.gamma_lo, args.gamma_hi, args.dim, args.seed)
        print(f"samples {gap.samples}")
        print(f"min_scaled_gap {fmt(gap.min_scaled_gap)}")
        print(f"violations {gap.violations}")
    return EXIT_OK


def dispatch(args) -> int:
    if args.command == "lemma-check":
        return cmd_lemma(args)
    cfg, params = _load(args.config)
    out = Path(args.out)
    logger.info("%s: grid %s, dt=%g, t_end=%g", args.command, params.grid.n, cfg.stepping.dt, cfg.stepping.t_end)
    if args.command == "run":
        return cmd_run(cfg, params, out)
    if args.command == "picard":
        return cmd_picard(cfg, params, out)
    if args.command == "sweep":
        return cmd_sweep(cfg, params, out, args.workers)
    return cmd_diagnose(cfg, params, out, args.traj)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return dispatch(args)
    except (ConfigParseError, ConfigValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, EmptyBall, FormatError, InsufficientSnapshots) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDiverged as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (BlowUp, NonFiniteField) as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    except SnapshotIOError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except NetformError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
