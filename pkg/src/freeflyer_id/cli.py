"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .control import MeasurementLog
from .energy import select_harmonics
from .errors import ConfigError, FreeFlyerError
from .estimation import averaged_data, estimate_from_log
from .scenario import (ScenarioConfig, Stage, compare_criteria, emit_plot_data, get_trajectory, run_full,
                       run_saturation_study, simulate, write_energy_trace, write_sweep)

log = logging.getLogger("freeflyer_id")


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig(seed=0)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=Path(args.out))
    return cfg


def _read_log(path) -> MeasurementLog:
    try:
        return MeasurementLog.from_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read log {path}: {exc}", "estimate") from None


def cmd_gen_traj(cfg, args):
    traj = get_trajectory(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "trajectory.json"
    traj.save(path)
    print(path)


def cmd_simulate(cfg, args):
    log_ = simulate(cfg, get_trajectory(cfg))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / "log.csv"
    log_.to_csv(path)
    print(f"{path} (saturation {log_.saturation_fraction:.1%})")


def cmd_estimate(cfg, args):
    log_ = _read_log(args.log)
    with Stage("estimate"):
        res = estimate_from_log(log_, cfg.n_range, cfg.actuation, truth=cfg.true_params if args.truth else None)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    res.save(cfg.output_dir / "result.json")
    print(f"n* = {res.n_star}, mass = {res.pi_hat[0]:.4f} kg")


def cmd_sweep(cfg, args):
    log_ = _read_log(args.log)
    with Stage("estimate"):
        sel = select_harmonics(averaged_data(log_, cfg.actuation), cfg.n_range)
        res = estimate_from_log(log_, cfg.n_range, cfg.actuation,
                                truth=cfg.true_params if args.truth else None, selection=sel)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    write_sweep(cfg.output_dir / "sweep.csv", res.sweep)
    write_energy_trace(cfg.output_dir / "energy_trace.csv", sel.traces[sel.n_star])
    print(f"n* = {res.n_star}")


def cmd_full_run(cfg, args):
    run = run_full(cfg)
    emit_plot_data([run], cfg.output_dir / "plot_data")
    e = run.result.errors
    print(f"n* = {run.result.n_star}; mass error {e.mass_error:.4g} kg, inertia RMSE {e.inertia_rmse:.3g} kg m^2, "
          f"offset error {e.offset_error_norm * 1000:.3g} mm; saturation {run.log.saturation_fraction:.1%}")


def cmd_saturation(cfg, args):
    rows = run_saturation_study(cfg, args.bounds, workers=args.workers)
    for r in rows:
        print(f"u_bound {r['u_bound']:g}: saturation {r['saturation_fraction']:.1%}, n* {r['n_star']}, "
              f"error {r['combined']:.4g} (best {r['best_combined']:.4g} at n={r['n_best']})")


def cmd_compare(cfg, args):
    rows = compare_criteria(cfg, args.per_criterion, tuple(args.loads), cfg.output_dir, workers=args.workers)
    for r in rows:
        print(f"{r['criterion']} #{r['trajectory']} {r['load']}: mass {r['mass_error']:.4g} kg, "
              f"inertia {r['inertia_rmse']:.3g}, offset {r['offset_error_norm'] * 1000:.3g} mm")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="freeflyer-id", description="Inertial parameter identification for free flyers")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-traj", parents=[common], help="optimise an excitation trajectory").set_defaults(fn=cmd_gen_traj)
    sub.add_parser("simulate", parents=[common], help="track the trajectory and write a log").set_defaults(
        fn=cmd_simulate)
    for name, fn, help_ in (("estimate", cmd_estimate, "estimate parameters from a log"),
                            ("sweep-harmonics", cmd_sweep, "per-n residual table for a log")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--log", required=True, help="log CSV written by 'simulate'")
        sp.add_argument("--truth", action="store_true", help="report errors against the config's true_params")
        sp.set_defaults(fn=fn)
    sub.add_parser("full-run", parents=[common], help="trajectory, simulation and estimation").set_defaults(
        fn=cmd_full_run)
    sp = sub.add_parser("saturation-study", parents=[common], help="repeat a run over input bounds")
    sp.add_argument("--bounds", type=float, nargs="+", default=[1.0, 0.6, 0.4])
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_saturation)
    sp = sub.add_parser("compare-criteria", parents=[common], help="J1 vs J2 error table")
    sp.add_argument("--per-criterion", type=int, default=5)
    sp.add_argument("--loads", nargs="+", default=["load1", "load2"], choices=["load1", "load2"])
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        args.fn(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FreeFlyerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
