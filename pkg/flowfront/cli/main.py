#!/usr/bin/env python3
"""
Flow-front simulation, fault injection, coupled-SDE fitting and evaluation.

Examples:
  flowfront simulate --config run.json --out data/front.csv --sensors 8
  flowfront inject --data data/front.csv --config case1.json --out data/case1.csv
  flowfront fit --data data/case1.csv --config case1.json --out out/params.json
  flowfront evaluate --data data/case1.csv --truth data/truth.csv --params out/params.json --out out/eval
  flowfront sweep --config grid.json --out out/sweep --seed 7
"""

from __future__ import annotations
import argparse
from pathlib import Path
import sys
import time
from typing import List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from flowfront.errors import ConfigError, NumericalError
from flowfront.schemas.config import RunConfig, derive_seed, load_config
from flowfront.services import storage
from flowfront.services.cdekf import frames_from_series, series_from_frames
from flowfront.services.evaluation import evaluate_run, observe, run_sweep, simulate_truth, write_sweep
from flowfront.services.faults import apply_scenario
from flowfront.services.mle import FitResult, estimate
from flowfront.services.pde_sim import FrontSeries

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = "DEBUG" if verbose else ("WARNING" if quiet else "INFO")
    logger.remove()
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> {name}: {message}")


def _wrote(*paths: Path) -> None:
    for p in paths:
        print(f"Wrote: {p}")


def _read_series(path: Path, config: RunConfig) -> FrontSeries:
    return storage.read_front_csv(path, Ly=config.grid.Ly, nx=config.grid.nx)


# ---------- Subcommands ----------

def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    n_sensors = args.sensors if args.sensors is not None else config.sensors.n_sensors
    truth = simulate_truth(config)
    data = observe(truth, config.sim.noise, n_sensors, derive_seed(config.seed, 0))
    storage.write_front_csv(data, args.out)
    _wrote(args.out)
    if args.truth_out:
        storage.write_front_csv(truth, args.truth_out)
        _wrote(args.truth_out)
    return EXIT_OK


def cmd_inject(args: argparse.Namespace, config: RunConfig) -> int:
    series = _read_series(args.data, config)
    frames = apply_scenario(frames_from_series(series), config.scenario, seed=derive_seed(config.seed, 1))
    storage.write_front_csv(series_from_frames(frames, series), args.out)
    _wrote(args.out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, config: RunConfig) -> int:
    series = _read_series(args.data, config)
    expected = config.sensors.n_sensors
    if expected is not None and series.n_lines != expected:
        raise ConfigError(
            f"{args.data} has {series.n_lines} line columns",
            [f"/sensors/n_sensors: config expects {expected} sensors"],
        )
    theta0 = FitResult.model_validate(storage.read_json(args.init)).params() if args.init else None
    fit = estimate(
        frames_from_series(series),
        config.build_stencil(series.n_lines),
        theta0,
        config.estimate_options(),
        config.filter_options(),
        Ly=config.grid.Ly,
    )
    storage.write_json(args.out, fit.model_dump(mode="json"))
    _wrote(args.out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    series = _read_series(args.data, config)
    truth = _read_series(args.truth, config)
    fit = FitResult.model_validate(storage.read_json(args.params))
    stencil = config.build_stencil(series.n_lines, fit.order)
    record = evaluate_run(
        truth,
        frames_from_series(series),
        series.columns,
        fit.params(),
        stencil,
        config.filter_options(),
        noise=config.sim.noise,
        scenario=config.scenario.label,
    )
    summary = args.out / "evaluation.json"
    series_csv = args.out / f"rmse_{record.config_id}.csv"
    storage.write_json(summary, record.model_dump(mode="json"))
    storage.write_frame_csv(series_csv, pd.DataFrame({"t": record.times, "rmse": record.rmse}))
    _wrote(summary, series_csv)
    logger.info("avg_rmse={:.6g} m over {} steps", record.avg_rmse, len(record.rmse))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    records = run_sweep(config)
    _wrote(*write_sweep(config, records, args.out))
    if not any(not r.error for r in records):
        logger.error("every sweep cell failed")
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------- Parser ----------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flowfront",
        description="Simulate resin flow-fronts, inject sensor faults, fit and evaluate coupled-SDE models.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run config (all sections optional).")
    common.add_argument("--seed", type=int, default=None, help="Override the config's master seed.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug-level logs.")
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")

    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Run the Darcy simulation and write sensor data.")
    s.add_argument("--out", type=Path, required=True, help="Front series CSV.")
    s.add_argument("--sensors", type=int, default=None, help="Number of line sensors (default: config / full resolution).")
    s.add_argument("--truth-out", type=Path, default=None, help="Also write the noiseless full-resolution series.")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("inject", parents=[common], help="Apply the config's fault scenario to a data CSV.")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("fit", parents=[common], help="Maximum-likelihood fit of the coupled SDE.")
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True, help="Fitted parameters JSON.")
    s.add_argument("--init", type=Path, default=None, help="Start from a previous fit's parameters.")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("evaluate", parents=[common], help="One-step-ahead RMSE of fitted parameters.")
    s.add_argument("--data", type=Path, required=True, help="Sensor data the filter runs on.")
    s.add_argument("--truth", type=Path, required=True, help="Noiseless full-resolution series.")
    s.add_argument("--params", type=Path, required=True, help="Fit JSON from `flowfront fit`.")
    s.add_argument("--out", type=Path, required=True, help="Output directory.")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="Run the sweep grid from the config.")
    s.add_argument("--out", type=Path, required=True, help="Output directory.")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    t0 = time.time()
    try:
        config = load_config(args.config).with_seed(args.seed)
        code = args.func(args, config)
    except FileNotFoundError as e:
        print(f"[error] Input file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"[error] Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as e:
        print(f"[error] Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_CONFIG
    logger.debug("{} finished in {:.2f}s", args.command, time.time() - t0)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
