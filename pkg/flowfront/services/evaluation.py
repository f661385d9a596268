# flowfront/services/evaluation.py
"""
One-step-ahead scoring of a fitted model against the noiseless simulated front,
and the sweep harness over sampling intervals, noise levels, sensor counts,
stencil orders and fault scenarios.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from flowfront.errors import FlowFrontError
from flowfront.schemas.config import RunConfig, derive_seed
from flowfront.schemas.results import EvaluationRecord, SweepRow
from flowfront.services import storage
from flowfront.services.cdekf import ObservationFrame, filter_pass, frames_from_series
from flowfront.services.faults import FaultScenario, apply_scenario
from flowfront.services.mle import FilterOptions, estimate
from flowfront.services.pde_sim import FrontSeries, add_noise, select_lines, simulate
from flowfront.services.sde_model import CoupledFrontModel, ModelParams, Stencil

SWEEP_COLUMNS = ["config_id", "order", "n_sensors", "dt", "noise", "scenario", "replicate", "avg_rmse", "error"]
ORDER_COLUMNS = ["n_sensors", "dt", "noise", "scenario", "rmse_order2", "rmse_order4", "improvement_pct"]

# seed streams
_NOISE, _FAULT, _FIT = 0, 1, 2


def interpolate_front(predictions: np.ndarray, sensor_columns: np.ndarray, full_columns: np.ndarray) -> np.ndarray:
    """Piecewise-linear front across all grid columns from the values at the sensor columns."""
    return np.interp(np.asarray(full_columns, dtype=float), np.asarray(sensor_columns, dtype=float), predictions)


def rmse_t(truth: np.ndarray, f_est: np.ndarray) -> float:
    """(1/(nx+1)) * sum_l sqrt((Z_l - f_l)^2), i.e. the mean absolute deviation."""
    truth = np.asarray(truth, dtype=float)
    f_est = np.asarray(f_est, dtype=float)
    if truth.shape != f_est.shape:
        raise ValueError(f"length mismatch: truth {truth.shape} vs estimate {f_est.shape}")
    return float(np.mean(np.sqrt((truth - f_est) ** 2)))


def evaluate_run(
    truth: FrontSeries,
    frames: Sequence[ObservationFrame],
    columns: np.ndarray,
    params: ModelParams,
    stencil: Stencil,
    filter_options: FilterOptions = FilterOptions(),
    *,
    Y0: Optional[np.ndarray] = None,
    config_id: int = 0,
    noise: float = 0.0,
    scenario: str = "none",
    replicate: int = 0,
) -> EvaluationRecord:
    """Score the filter's pre-update predictions at every frame after the first."""
    columns = np.asarray(columns)
    full = np.arange(truth.nx + 1)
    if truth.n_lines != truth.nx + 1:
        raise ValueError("truth must be a full-resolution series")
    if len(frames) != len(truth.times) or not np.allclose([f.t for f in frames], truth.times):
        raise ValueError("frames and truth must share sample times")
    if len(frames) < 2:
        raise ValueError("need at least two frames to score one-step predictions")
    if columns[0] != 0 or columns[-1] != truth.nx:
        raise ValueError("sensor columns must include the first and last grid column")

    model = CoupledFrontModel(params=params, stencil=stencil, y_min=filter_options.y_min)
    result = filter_pass(frames, model, Y0=Y0, Ps=filter_options.Ps, substep=filter_options.substep)

    times, rmse = [], []
    for k, step in enumerate(result.steps, start=1):
        f_est = interpolate_front(step.predicted.mean, columns, full)
        times.append(float(step.t))
        rmse.append(rmse_t(truth.fronts[k], f_est))

    return EvaluationRecord(
        config_id=config_id,
        order=stencil.order,
        n_sensors=len(columns),
        sample_interval=float(np.median(np.diff(truth.times))),
        noise=noise,
        scenario=scenario,
        replicate=replicate,
        avg_rmse=float(np.mean(rmse)),
        times=times,
        rmse=rmse,
    )


# ---------- Sweep ----------


@dataclass(frozen=True)
class SweepCell:
    config_id: int
    replicate: int
    interval_index: int
    noise_index: int
    scenario_index: int
    sample_interval: float
    noise: float
    n_sensors: int
    order: int
    scenario: FaultScenario


def sweep_cells(config: RunConfig) -> List[SweepCell]:
    """Every grid cell in config_id order; orders vary fastest so paired cells sit together."""
    s = config.sweep
    cells = []
    for rep, (i_dt, dt), (i_noise, noise), n, (i_scen, scen), order in product(
        range(s.replicates),
        enumerate(s.sample_intervals),
        enumerate(s.noise_stds),
        s.sensor_counts,
        enumerate(s.scenarios),
        s.orders,
    ):
        cells.append(
            SweepCell(
                config_id=len(cells),
                replicate=rep,
                interval_index=i_dt,
                noise_index=i_noise,
                scenario_index=i_scen,
                sample_interval=dt,
                noise=noise,
                n_sensors=n,
                order=order,
                scenario=scen,
            )
        )
    return cells


def simulate_truth(config: RunConfig, sample_interval: Optional[float] = None) -> FrontSeries:
    sim = config.sim
    return simulate(
        config.build_grid(),
        config.build_field(),
        config.material.p0,
        config.p_th_resolved,
        sim.dt_pde,
        sim.T,
        sim.sample_interval if sample_interval is None else sample_interval,
        solver=sim.solver,
    )


def observe(truth: FrontSeries, noise: float, n_sensors: Optional[int], seed: int) -> FrontSeries:
    """Noisy sensor data: noise on the full-resolution front, then line selection."""
    noisy = add_noise(truth, noise, seed)
    return noisy if n_sensors is None else select_lines(noisy, n_sensors)


def run_cell(config: RunConfig, truth: FrontSeries, cell: SweepCell) -> EvaluationRecord:
    """Observe, inject faults, fit and score one cell. Pure in (config, truth, cell)."""
    seed = config.seed
    observed = observe(
        truth, cell.noise, cell.n_sensors, derive_seed(seed, _NOISE, cell.replicate, cell.interval_index, cell.noise_index)
    )
    fault_seed = derive_seed(
        seed, _FAULT, cell.replicate, cell.interval_index, cell.noise_index, cell.n_sensors, cell.scenario_index
    )
    frames = apply_scenario(frames_from_series(observed), cell.scenario, seed=fault_seed)
    stencil = config.build_stencil(observed.n_lines, cell.order)
    filter_options = config.filter_options()
    fit = estimate(
        frames,
        stencil,
        None,
        config.estimate_options(derive_seed(seed, _FIT, cell.config_id)),
        filter_options,
        Ly=truth.Ly,
    )
    return evaluate_run(
        truth,
        frames,
        observed.columns,
        fit.params(),
        stencil,
        filter_options,
        config_id=cell.config_id,
        noise=cell.noise,
        scenario=cell.scenario.label,
        replicate=cell.replicate,
    )


def _failed(cell: SweepCell, error: BaseException | str) -> EvaluationRecord:
    tag = error if isinstance(error, str) else f"{type(error).__name__}: {error}"
    return EvaluationRecord(
        config_id=cell.config_id,
        order=cell.order,
        n_sensors=cell.n_sensors,
        sample_interval=cell.sample_interval,
        noise=cell.noise,
        scenario=cell.scenario.label,
        replicate=cell.replicate,
        avg_rmse=float("nan"),
        error=" ".join(tag.split()),
    )


def _guarded_cell(config: RunConfig, truth: FrontSeries, cell: SweepCell) -> EvaluationRecord:
    try:
        rec = run_cell(config, truth, cell)
    except (FlowFrontError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        logger.warning("cell {} failed: {}", cell.config_id, e)
        return _failed(cell, e)
    logger.info(
        "cell {}: order={} n={} dt={:g} noise={:g} {} avg_rmse={:.4g}",
        cell.config_id, cell.order, cell.n_sensors, cell.sample_interval, cell.noise, cell.scenario.label, rec.avg_rmse,
    )
    return rec


def _guarded_cell_task(args) -> EvaluationRecord:
    return _guarded_cell(*args)


def run_sweep(config: RunConfig, out_dir: Optional[Path] = None) -> List[EvaluationRecord]:
    """Run every sweep cell; failures become tagged rows. Writes the CSVs when out_dir is given."""
    cells = sweep_cells(config)
    logger.info("sweep: {} cells, {} worker(s)", len(cells), config.sweep.workers)

    truths: Dict[int, FrontSeries] = {}
    truth_errors: Dict[int, str] = {}
    for i_dt, dt in enumerate(config.sweep.sample_intervals):
        try:
            truths[i_dt] = simulate_truth(config, dt)
        except (FlowFrontError, ValueError, ArithmeticError) as e:
            logger.warning("truth simulation at dt={:g} failed: {}", dt, e)
            truth_errors[i_dt] = f"{type(e).__name__}: {e}"

    runnable = [c for c in cells if c.interval_index in truths]
    tasks = [(config, truths[c.interval_index], c) for c in runnable]
    if config.sweep.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.sweep.workers) as pool:
            done = list(pool.map(_guarded_cell_task, tasks))
    else:
        done = [_guarded_cell_task(t) for t in tasks]

    by_id = {rec.config_id: rec for rec in done}
    records = [by_id.get(c.config_id) or _failed(c, truth_errors[c.interval_index]) for c in cells]

    ok = sum(1 for r in records if not r.error)
    logger.info("sweep finished: {} of {} cells succeeded", ok, len(records))
    if out_dir is not None:
        write_sweep(config, records, Path(out_dir))
    return records


def summarize_orders(records: Sequence[EvaluationRecord]) -> pd.DataFrame:
    """Mean avg_rmse per order and the order-2 to order-4 improvement, per setting."""
    rows = [
        dict(n_sensors=r.n_sensors, dt=r.sample_interval, noise=r.noise, scenario=r.scenario, order=r.order, avg_rmse=r.avg_rmse)
        for r in records
        if not r.error and np.isfinite(r.avg_rmse)
    ]
    if not rows:
        return pd.DataFrame(columns=ORDER_COLUMNS)
    df = pd.DataFrame(rows)
    table = df.pivot_table(index=["n_sensors", "dt", "noise", "scenario"], columns="order", values="avg_rmse", aggfunc="mean")
    table = table.reindex(columns=[2, 4])
    table.columns = ["rmse_order2", "rmse_order4"]
    table["improvement_pct"] = 100.0 * (table["rmse_order2"] - table["rmse_order4"]) / table["rmse_order2"]
    return table.reset_index()[ORDER_COLUMNS]


def write_sweep(config: RunConfig, records: Sequence[EvaluationRecord], out_dir: Path) -> List[Path]:
    storage.ensure_dir(out_dir)
    written = []

    sweep_csv = out_dir / "sweep.csv"
    rows = [SweepRow.from_record(r).model_dump() for r in records]
    storage.write_frame_csv(sweep_csv, pd.DataFrame(rows, columns=SWEEP_COLUMNS))
    written.append(sweep_csv)

    for r in records:
        if r.error:
            continue
        path = out_dir / f"rmse_{r.config_id}.csv"
        storage.write_frame_csv(path, pd.DataFrame({"t": r.times, "rmse": r.rmse}))
        written.append(path)

    orders_csv = out_dir / "order_comparison.csv"
    storage.write_frame_csv(orders_csv, summarize_orders(records))
    written.append(orders_csv)

    written.append(storage.write_manifest(out_dir, config.model_dump(mode="json"), written))
    return written
