import asyncio
import logging
import numbers
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from config import settings
from src.cli.plan import ExperimentPlan
from src.services import analysis, oracle
from src.services.mobility import build_shape
from src.services.geometry import TorusGeometry
from src.services.scheduling import AreaConstants, i_max, squarelet_area
from src.utils.constants import AGGREGATE_CONFIDENCE, MIN_SLOPE_POINTS
from src.utils.file_manager import file_manager
from src.utils.run_manager import RunJob, RunManager
from src.utils.worker import execute_run, run_jobs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN_FAILED = 2

AGGREGATE_COLUMNS = [
    "kind", "metric", "parameter", "value", "runs", "failed",
    "mean", "ci_lo", "ci_hi", "slope", "intercept", "stderr", "r2", "points",
]
METRICS = ("throughput", "mean_delay")


def emit_curves(plan: ExperimentPlan, out: Path) -> list[Path]:
    """
    Write the fast-mobility power curve, the trade-off lines and the
    slow-mobility comparison curve. Consumes no randomness.
    """
    grid = plan.curves
    params = {"command": "analyze", **grid.model_dump()}
    paths = [
        file_manager.write_csv(analysis.fast_power_curve(grid.deltas), out / "fast_power.csv", params),
        file_manager.write_csv(analysis.tradeoff_lines(grid.deltas, grid.betas), out / "tradeoff.csv", params),
        file_manager.write_csv(analysis.slow_power_curve(grid.deltas), out / "slow_power.csv", params),
    ]
    low, high = analysis.slow_preference_interval()
    logger.info(f"Wrote curves to {out}; slow-mobility bisection preferred for delta in ({low:.4f}, {high:.4f})")
    return paths


def _jobs(plan: ExperimentPlan, out: Path) -> list[RunJob]:
    axis = plan.sweep_axis.parameter if plan.sweep_axis else None
    return [
        RunJob(
            run_id=rid,
            config=config.model_dump(by_alias=True, mode="json"),
            output_dir=out.as_posix(),
            axis=axis,
            value=value,
            seed=seed,
        )
        for rid, value, seed, config in plan.run_configs()
    ]


def simulate(plan: ExperimentPlan, out: Path) -> int:
    """Run the base configuration once per seed in this process."""
    for job in _jobs(plan, out):
        summary = execute_run(job)
        logger.info(f"[{job.run_id}] {summary}")

    base = plan.base
    shape = build_shape(base.delta, TorusGeometry.from_area(base.n), settings.shape_resolution)
    params = {"delta": base.delta, "n": base.n, "G": shape.G}
    file_manager.write_csv(shape.to_frame(), out / "shape.csv", params)
    return EXIT_OK


def _t_interval(values: np.ndarray) -> tuple[float, float, float]:
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, mean, mean
    sem = float(stats.sem(values))
    if sem == 0:
        return mean, mean, mean
    lo, hi = stats.t.interval(AGGREGATE_CONFIDENCE, df=len(values) - 1, loc=mean, scale=sem)
    return mean, float(lo), float(hi)


def _empty_row(**kwargs) -> dict:
    row = {column: None for column in AGGREGATE_COLUMNS}
    row.update(kwargs)
    return row


def aggregate(runs: pd.DataFrame, parameter: Optional[str]) -> pd.DataFrame:
    """
    Per-value means with t confidence intervals, plus log-log slope fits of
    each metric against a numeric sweep axis.

    Args:
        runs: One row per run with columns value, status and the metrics
        parameter: Sweep parameter name, None without a sweep

    Returns:
        Long-format frame with kind "point" and kind "slope" rows
    """
    rows = []
    means: dict[str, list[tuple[float, float]]] = {m: [] for m in METRICS}
    for value, group in runs.groupby("value", sort=False, dropna=False):
        ok = group[group["status"] == "completed"]
        failed = int((group["status"] != "completed").sum())
        for metric in METRICS:
            values = ok[metric].dropna().to_numpy(dtype=float)
            if len(values) == 0:
                rows.append(_empty_row(kind="point", metric=metric, parameter=parameter, value=value, runs=0, failed=failed))
                continue
            mean, lo, hi = _t_interval(values)
            rows.append(_empty_row(
                kind="point", metric=metric, parameter=parameter, value=value,
                runs=len(values), failed=failed, mean=mean, ci_lo=lo, ci_hi=hi,
            ))
            if isinstance(value, numbers.Real) and not isinstance(value, (bool, np.bool_)) and value > 0 and mean > 0:
                means[metric].append((float(value), mean))

    for metric, points in means.items():
        if len(points) < MIN_SLOPE_POINTS:
            continue
        xs, ys = zip(*points)
        fit = oracle.slope_fit(xs, ys)
        rows.append(_empty_row(
            kind="slope", metric=metric, parameter=parameter, slope=fit.slope,
            intercept=fit.intercept, stderr=fit.stderr, r2=fit.r2, points=fit.points,
        ))
        logger.info(f"Fitted {metric} slope vs {parameter}: {fit.slope:.4f} +/- {fit.stderr:.4f}")
    return pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)


def sweep_header(plan: ExperimentPlan) -> dict:
    """Base run parameters, sweep axis and seeds for the sweep-level CSV headers."""
    params = plan.base.model_dump(by_alias=True, mode="json")
    params.pop("seed")
    params.update({
        "command": plan.command,
        "name": plan.name,
        "parameter": plan.sweep_axis.parameter if plan.sweep_axis else None,
        "values": list(plan.sweep_axis.values) if plan.sweep_axis else None,
        "seeds": plan.seeds,
    })
    return params


def run_sweep(plan: ExperimentPlan, out: Path, workers: Optional[int] = None) -> int:
    """
    Execute every (sweep value x seed) run in the worker pool and write the
    run index and the aggregate.

    Returns:
        0 when every run completed, 2 otherwise
    """
    jobs = _jobs(plan, out)
    manager = RunManager(max_concurrent_runs=workers or settings.max_concurrent_runs, db_path=settings.run_db_path)
    statuses = asyncio.run(run_jobs(jobs, workers or plan.workers, manager))

    rows = []
    for job in jobs:
        row = {"run_id": job.run_id, "value": job.value, "seed": job.seed, "status": statuses[job.run_id]}
        path = file_manager.run_paths(out, job.run_id)["json"]
        if row["status"] == "completed" and path.exists():
            summary = file_manager.read_json(path)["summary"]
            row.update({k: summary[k] for k in ("throughput", "mean_delay", "delivered", "injected", "unstable")})
        rows.append(row)
    runs = pd.DataFrame(rows, columns=["run_id", "value", "seed", "status", "throughput", "mean_delay", "delivered", "injected", "unstable"])

    parameter = plan.sweep_axis.parameter if plan.sweep_axis else None
    params = sweep_header(plan)
    file_manager.write_json(plan.model_dump(by_alias=True, mode="json"), out / "plan.json")
    file_manager.write_csv(runs, out / "runs.csv", params)
    file_manager.write_csv(aggregate(runs, parameter), out / "aggregate.csv", params)

    failed = [rid for rid, status in statuses.items() if status != "completed"]
    if failed:
        logger.error(f"{len(failed)} of {len(jobs)} runs failed: {failed}")
        return EXIT_RUN_FAILED
    logger.info(f"Sweep '{plan.name}' completed: {len(jobs)} runs in {out}")
    return EXIT_OK


def _oracle_points(plan: ExperimentPlan):
    spec = plan.oracle
    for n in spec.ns:
        for delta in spec.deltas:
            if spec.estimator == "meeting":
                for A in spec.areas:
                    for D in spec.distances:
                        yield {"n": n, "delta": delta, "A": A, "D": D}
                continue
            Z0 = spec.z0_constant * analysis.z0_constraint(delta, n)
            top = i_max(n, Z0)
            for step in spec.steps:
                if step > top:
                    logger.warning(f"Step {step} exceeds i_max={top} at n={n}, delta={delta}; skipped")
                    continue
                area = squarelet_area(step, delta, n, Z0, AreaConstants(c=spec.area_constant))
                yield {"n": n, "delta": delta, "step": step, "Z0": Z0, "A": min(float(n), spec.area_scale * area)}


def _oracle_slopes(frame: pd.DataFrame, estimator: str) -> pd.DataFrame:
    x, keys = ("D", ["n", "delta", "A", "seed"]) if estimator == "meeting" else ("n", ["delta", "step", "seed"])
    rows = []
    for group_key, group in frame.groupby(keys, sort=True):
        group = group[group["estimate"] > 0]
        if group[x].nunique() < MIN_SLOPE_POINTS:
            continue
        fit = oracle.slope_fit(group[x], group["estimate"])
        rows.append({**dict(zip(keys, group_key)), "x": x, "slope": fit.slope, "intercept": fit.intercept,
                     "stderr": fit.stderr, "r2": fit.r2, "points": fit.points})
    return pd.DataFrame(rows, columns=keys + ["x", "slope", "intercept", "stderr", "r2", "points"])


def run_oracle(plan: ExperimentPlan, out: Path, workers: Optional[int] = None) -> int:
    """Estimate every grid point of the oracle plan for each seed."""
    spec = plan.oracle
    workers = workers or plan.workers or 1
    estimates = []
    for seed in plan.seeds:
        for point in _oracle_points(plan):
            if spec.estimator == "meeting":
                estimate = oracle.estimate_meeting_probability(
                    point["D"], point["A"], point["delta"], point["n"], spec.trials, seed, workers,
                )
            else:
                census = oracle.cell_census(
                    point["step"], point["delta"], point["n"], point["Z0"], point["A"],
                    spec.instances, spec.slots, seed, workers=workers,
                )
                if spec.estimator == "populated":
                    estimate = oracle.estimate_populated_probability(
                        point["step"], point["delta"], point["n"], point["Z0"], point["A"], census=census,
                    )
                else:
                    estimate = oracle.estimate_pbeta(census, seed=seed)
            logger.info(f"{spec.estimator} {point}: {estimate.estimate:.5g} [{estimate.ci_lo:.5g}, {estimate.ci_hi:.5g}]")
            estimates.append(estimate)

    frame = oracle.to_frame(estimates)
    params = {"command": "oracle", **spec.model_dump(), "seeds": plan.seeds}
    file_manager.write_csv(frame, out / "oracle.csv", params)
    file_manager.write_csv(_oracle_slopes(frame, spec.estimator), out / "oracle_slopes.csv", params)
    return EXIT_OK


def dispatch(plan: ExperimentPlan, out: Optional[Path] = None, workers: Optional[int] = None) -> int:
    out = Path(out or plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if plan.command == "analyze":
        emit_curves(plan, out)
        return EXIT_OK
    if plan.command == "simulate":
        return simulate(plan, out)
    if plan.command == "sweep":
        return run_sweep(plan, out, workers)
    return run_oracle(plan, out, workers)
