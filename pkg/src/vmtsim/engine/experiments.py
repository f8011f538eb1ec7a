"""Experiment harness: block-size sweep, stress test and adaptive vs static runs.

Grid cells are independent simulations; with ``jobs > 1`` they run in a
process pool and results are merged back in grid order.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from vmtsim.config import SimConfig, config_from_dict, config_to_dict
from vmtsim.engine.simulator import Policies, RunResult, build_cfg, prepare_workload, run, usl_params
from vmtsim.optimizer.solver import solve_allocation
from vmtsim.optimizer.usl import FitError, UslFit, UslParams, fit_usl_detailed
from vmtsim.traffic import Segment, Trace, ramp_profile

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, int], None]

SWEEP_BLOCK_SIZES = (64, 128, 256, 512)
SWEEP_CAPACITIES = (512, 1024, 1536)
STRESS_PMU_COUNTS = (3, 4, 5)
CALIBRATION_COUNTS = (1, 2, 3, 4)
CALIBRATION_LOADS = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0)


@dataclass
class Cell:
    """One simulation of a grid."""

    config: SimConfig
    trace: Trace | None = None
    policies: Policies | None = None
    initial_counts: dict[int, int] | None = None


def derive(base: SimConfig, update: Callable[[dict[str, Any]], None]) -> SimConfig:
    """Copy ``base`` through its serialized form with ``update`` applied."""
    data = config_to_dict(base)
    update(data)
    return config_from_dict(data)


def _run_cell(cell: Cell) -> RunResult:
    return run(cell.config, cell.trace, cell.policies, cell.initial_counts)


def run_cells(cells: Sequence[Cell], jobs: int = 1, progress: ProgressCallback | None = None) -> list[RunResult]:
    """Run ``cells``; results come back in input order regardless of ``jobs``."""
    total = len(cells)
    if jobs <= 1 or total <= 1:
        results = []
        for i, cell in enumerate(cells):
            results.append(_run_cell(cell))
            if progress:
                progress(i + 1, total)
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_cell, cell) for cell in cells]
        out: list[RunResult] = []
        for i, fut in enumerate(futures):
            out.append(fut.result())
            if progress:
                progress(i + 1, total)
        return out


# -- sweep -------------------------------------------------------------------


def experiment_sweep(
    base: SimConfig,
    block_sizes: Sequence[int] = SWEEP_BLOCK_SIZES,
    capacities: Sequence[int] = SWEEP_CAPACITIES,
    jobs: int = 1,
    progress: ProgressCallback | None = None,
) -> list[dict[str, Any]]:
    """Hit rate, latency and memory bandwidth per (block size, VMT capacity).

    Every VMT gets ``capacity / block_size`` PMUs. Cells whose capacity is not
    a positive multiple of the block size produce a row with empty metrics.
    """
    grid = [(b, cap) for b in block_sizes for cap in capacities]
    if not grid:
        return []
    policies, trace = prepare_workload(base)
    cells: list[Cell] = []
    valid: list[bool] = []
    for block, cap in grid:
        ok = cap > 0 and cap % block == 0
        valid.append(ok)
        if not ok:
            logger.warning("Sweep cell block=%d capacity=%d skipped: capacity not a multiple", block, cap)
            continue
        per_vmt = cap // block

        def update(data: dict[str, Any], block: int = block, per_vmt: int = per_vmt) -> None:
            data["pmu"]["block-size"] = block
            for v in data["vmts"]:
                v["pmus"] = per_vmt
            data["pmu-count"] = per_vmt * len(data["vmts"])

        cells.append(Cell(derive(base, update), trace, policies))

    results = iter(run_cells(cells, jobs, progress))
    rows: list[dict[str, Any]] = []
    for (block, cap), ok in zip(grid, valid):
        row: dict[str, Any] = {"block_size": block, "vmt_capacity": cap}
        if ok:
            m = next(results).metrics
            row.update(
                hit_rate=m.hit_rate,
                p50_cycles=m.latency.percentile(50),
                p95_cycles=m.latency.percentile(95),
                mem_gbps=m.mem_gbps,
            )
        else:
            row.update(hit_rate=None, p50_cycles=None, p95_cycles=None, mem_gbps=None)
        rows.append(row)
    return rows


# -- stress ------------------------------------------------------------------


def experiment_stress(
    base: SimConfig,
    rates: Sequence[float],
    pmu_counts: Sequence[int] = STRESS_PMU_COUNTS,
    jobs: int = 1,
    progress: ProgressCallback | None = None,
) -> list[dict[str, Any]]:
    """Throughput and memory bandwidth against input rate for several PMU counts."""
    grid = [(rate, n) for n in pmu_counts for rate in rates]
    if not grid:
        return []
    cells: list[Cell] = []
    for rate, n in grid:

        def update(data: dict[str, Any], rate: float = rate, n: int = n) -> None:
            data["traffic"]["rate-pps"] = rate
            for v in data["vmts"]:
                v["pmus"] = n
            data["pmu-count"] = max(data["pmu-count"], n * len(data["vmts"]))

        cells.append(Cell(derive(base, update)))

    results = run_cells(cells, jobs, progress)
    return [
        {
            "input_rate_pps": rate,
            "pmu_count": n,
            "throughput_pps": r.metrics.throughput_pps,
            "mem_gbps": r.metrics.mem_gbps,
        }
        for (rate, n), r in zip(grid, results)
    ]


# -- adaptive ----------------------------------------------------------------


def calibrate_usl(
    base: SimConfig,
    counts: Sequence[int] = CALIBRATION_COUNTS,
    loads: Sequence[float] = CALIBRATION_LOADS,
    duration_ns: int = 200_000,
    jobs: int = 1,
) -> UslFit:
    """Fit USL parameters from short single-table runs over a grid of PMU counts and loads.

    Raises:
        FitError: If the collected window samples cannot be fitted
    """
    vmt0 = min(base.vmts, key=lambda v: v.id)
    pmu_count = max(counts)
    cells: list[Cell] = []
    for n in counts:
        for load in loads:

            def update(data: dict[str, Any], n: int = n, load: float = load) -> None:
                vmt = next(v for v in data["vmts"] if v["id"] == vmt0.id)
                vmt["pmus"] = n
                data["vmts"] = [vmt]
                data["cfg"] = {"file": None, "builtin": "chain"}
                data["pmu-count"] = pmu_count
                data["duration-ns"] = duration_ns
                data["optimizer"]["enabled"] = False
                data["traffic"]["rate-pps"] = base.traffic.rate_pps * load
                data["traffic"]["profile"] = []

            cells.append(Cell(derive(base, update)))
    samples = [s for r in run_cells(cells, jobs) for s in r.usl_samples.get(vmt0.id, [])]
    fit = fit_usl_detailed(samples)
    logger.info("Calibrated USL from %d window samples: %s", len(samples), fit.params)
    return fit


def experiment_adaptive(
    base: SimConfig,
    profile: Sequence[Segment] | None = None,
    jobs: int = 1,
    calibrate: bool = True,
    progress: ProgressCallback | None = None,
) -> tuple[list[dict[str, Any]], dict[str, Any]]:
    """Static oracle allocation against runtime OPT on the same traffic.

    Returns:
        (per-window rows, summary)
    """
    segments = list(profile) if profile else [(s.duration_ns, s.rate_pps) for s in base.traffic.profile]
    if not segments:
        segments = ramp_profile(0.2 * base.traffic.rate_pps, base.traffic.rate_pps, base.duration_ns)
    total_ns = sum(d for d, _ in segments)

    summary: dict[str, Any] = {"rule_zipf": base.traffic.rule_zipf, "profile": [list(s) for s in segments]}
    usl_update: dict[int, dict[str, float]] = {}
    if not base.optimizer.usl and calibrate:
        try:
            fit = calibrate_usl(base, jobs=jobs)
            usl_update = {v.id: _usl_dict(fit.params) for v in base.vmts}
            summary["usl_fit"] = _usl_dict(fit.params)
        except FitError as e:
            logger.warning("USL calibration failed, using default parameters: %s", e)

    def profiled(data: dict[str, Any]) -> None:
        data["traffic"]["profile"] = [{"duration-ns": d, "rate-pps": r} for d, r in segments]
        data["duration-ns"] = total_ns
        if usl_update:
            data["optimizer"]["usl"] = usl_update

    shared = derive(base, profiled)
    policies, trace = prepare_workload(shared)
    cfg, file_usl = build_cfg(shared)
    params = usl_params(shared, file_usl)
    peak = max(r for _, r in segments)
    floor = max(1, shared.optimizer.floor)
    static = solve_allocation(cfg, shared.pmu_count, params, peak, shared.optimizer.mode, floor)
    static_counts = {v.id: static.counts.get(v.id, 0) for v in shared.vmts}
    active = set(cfg.active_nodes())
    adaptive_counts = {v.id: (floor if v.id in active else 0) for v in shared.vmts}

    static_cfg = derive(shared, lambda d: d["optimizer"].update(enabled=False))
    adaptive_cfg = derive(shared, lambda d: d["optimizer"].update(enabled=True))
    static_run, adaptive_run = run_cells(
        [
            Cell(static_cfg, trace, policies, static_counts),
            Cell(adaptive_cfg, trace, policies, adaptive_counts),
        ],
        jobs,
        progress,
    )

    cycle_ns = shared.pipeline.cycle_ns
    rows: list[dict[str, Any]] = []
    for s, a in zip(static_run.windows, adaptive_run.windows):
        rows.append(
            {
                "window": s.window,
                "time_us": s.start_cycle * cycle_ns / 1000.0,
                "offered_pps": s.offered_pps,
                "static_hit_rate": s.hit_rate,
                "static_throughput_pps": s.throughput_pps,
                "static_active_pmus": s.active_pmus,
                "adaptive_hit_rate": a.hit_rate,
                "adaptive_throughput_pps": a.throughput_pps,
                "adaptive_active_pmus": a.active_pmus,
            }
        )
    summary.update(
        static_allocation={str(k): v for k, v in sorted(static_counts.items())},
        static_mean_pmus=float(np.mean([w.active_pmus for w in static_run.windows])) if rows else 0.0,
        adaptive_mean_pmus=float(np.mean([w.active_pmus for w in adaptive_run.windows])) if rows else 0.0,
        static_throughput_pps=static_run.metrics.throughput_pps,
        adaptive_throughput_pps=adaptive_run.metrics.throughput_pps,
        reallocations=adaptive_run.metrics.reallocations,
    )
    return rows, summary


def _usl_dict(p: UslParams) -> dict[str, float]:
    return {"alpha0": p.alpha0, "alpha1": p.alpha1, "beta0": p.beta0, "beta1": p.beta1}
