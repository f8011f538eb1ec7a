"""Experiment commands: block-size sweep, stress test and adaptive vs static."""

from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path

import typer

from vmtsim.commands.common import (
    err_console,
    get_printer,
    guarded,
    parse_list,
    progress_bar,
    resolve_config,
    resolve_out,
)
from vmtsim.config import SimConfig, write_resolved
from vmtsim.engine.experiments import (
    SWEEP_BLOCK_SIZES,
    SWEEP_CAPACITIES,
    STRESS_PMU_COUNTS,
    experiment_adaptive,
    experiment_stress,
    experiment_sweep,
)
from vmtsim.output import adaptive_columns, stress_columns, sweep_columns, write_csv, write_json
from vmtsim.traffic import Segment, constant_profile, ramp_profile, step_profile

logger = logging.getLogger(__name__)

STRESS_LOADS = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)


class ProfileKind(str, Enum):
    """Traffic profile of the adaptive experiment."""

    CONFIG = "config"
    CONSTANT = "constant"
    STEP = "step"
    RAMP = "ramp"


def build_profile(
    kind: ProfileKind, config: SimConfig, low: float | None, high: float | None, steps: int
) -> list[Segment] | None:
    """Segments for ``kind``; None keeps the configured profile (or the default ramp)."""
    high_pps = high if high is not None else config.traffic.rate_pps
    low_pps = low if low is not None else 0.2 * high_pps
    duration = config.duration_ns
    if kind == ProfileKind.CONSTANT:
        return constant_profile(high_pps, duration)
    if kind == ProfileKind.STEP:
        return step_profile(low_pps, high_pps, duration)
    if kind == ProfileKind.RAMP:
        return ramp_profile(low_pps, high_pps, duration, steps)
    return None


def sweep(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Base configuration file"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
    block_sizes: str | None = typer.Option(
        None, "--block-sizes", help=f"Comma-separated PMU block sizes [default: {SWEEP_BLOCK_SIZES}]"
    ),
    capacities: str | None = typer.Option(
        None, "--capacities", help=f"Comma-separated VMT capacities [default: {SWEEP_CAPACITIES}]"
    ),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Grid cells simulated in parallel"),
) -> None:
    """Hit rate, latency and memory bandwidth over block size x VMT capacity.

    Each VMT gets capacity / block-size PMUs. Cells where the capacity is not
    a multiple of the block size are reported with empty metrics.

    Examples:
        vmtsim sweep -c base.yaml
        vmtsim sweep --block-sizes 64,512 --capacities 512,1536 --jobs 4
    """
    blocks = parse_list(block_sizes, int, "--block-sizes")
    caps = parse_list(capacities, int, "--capacities")
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        write_resolved(config, out_dir)
        with progress_bar("Sweep") as progress:
            rows = experiment_sweep(
                config,
                SWEEP_BLOCK_SIZES if blocks is None else blocks,
                SWEEP_CAPACITIES if caps is None else caps,
                jobs=jobs,
                progress=progress,
            )
        path = write_csv(out_dir / "sweep.csv", rows, sweep_columns())

    get_printer().print(rows, sweep_columns())
    err_console.print(f"Wrote {path}")


def stress(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Base configuration file"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
    rates: str | None = typer.Option(
        None, "--rates", help="Comma-separated input rates in pps [default: multiples of traffic.rate-pps]"
    ),
    pmu_counts: str | None = typer.Option(
        None, "--pmu-counts", help=f"Comma-separated PMUs per VMT [default: {STRESS_PMU_COUNTS}]"
    ),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Grid cells simulated in parallel"),
) -> None:
    """Throughput and memory bandwidth against input rate for several PMU counts.

    Examples:
        vmtsim stress -c base.yaml
        vmtsim stress --rates 1e7,5e7,1e8 --pmu-counts 3,4,5 --jobs 4
    """
    rate_list = parse_list(rates, float, "--rates")
    counts = parse_list(pmu_counts, int, "--pmu-counts")
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        write_resolved(config, out_dir)
        if rate_list is None:
            rate_list = [config.traffic.rate_pps * f for f in STRESS_LOADS]
        with progress_bar("Stress") as progress:
            rows = experiment_stress(
                config,
                rate_list,
                STRESS_PMU_COUNTS if counts is None else counts,
                jobs=jobs,
                progress=progress,
            )
        path = write_csv(out_dir / "stress.csv", rows, stress_columns())

    get_printer().print(rows, stress_columns())
    err_console.print(f"Wrote {path}")


def adaptive(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Base configuration file"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
    profile: ProfileKind = typer.Option(ProfileKind.CONFIG, "--profile", "-p", help="Traffic profile"),
    low: float | None = typer.Option(None, "--low", help="Lowest rate in pps [default: 0.2 x --high]"),
    high: float | None = typer.Option(None, "--high", help="Peak rate in pps [default: traffic.rate-pps]"),
    steps: int = typer.Option(10, "--steps", min=1, help="Ramp segments"),
    calibrate: bool = typer.Option(
        True, "--calibrate/--no-calibrate", help="Fit USL parameters first when none are configured"
    ),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Runs simulated in parallel"),
) -> None:
    """Static oracle allocation against the runtime optimizer on the same traffic.

    Writes per-window adaptive.csv and a summary adaptive.json.

    Examples:
        vmtsim adaptive -c two_path.yaml
        vmtsim adaptive --profile step --low 5e6 --high 4e7
        vmtsim adaptive --profile ramp --steps 20 --no-calibrate
    """
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        write_resolved(config, out_dir)
        segments = build_profile(profile, config, low, high, steps)
        with progress_bar("Adaptive") as progress:
            rows, summary = experiment_adaptive(
                config, segments, jobs=jobs, calibrate=calibrate, progress=progress
            )
        path = write_csv(out_dir / "adaptive.csv", rows, adaptive_columns())
        write_json(out_dir / "adaptive.json", summary)

    get_printer().print(summary)
    err_console.print(f"Wrote {path}")
