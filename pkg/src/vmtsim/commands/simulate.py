"""The ``run`` command: one simulation with its result files."""

from __future__ import annotations

import logging
from pathlib import Path

import typer

from vmtsim.commands.common import err_console, get_printer, guarded, resolve_config, resolve_out
from vmtsim.config import write_resolved
from vmtsim.engine.simulator import run
from vmtsim.output import metrics_columns, window_columns, write_csv, write_json

logger = logging.getLogger(__name__)


def run_simulation(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Simulation configuration file"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
) -> None:
    """Run one simulation.

    Writes config.resolved, metrics.json and windows.csv to the output
    directory and prints the headline metrics.

    Examples:
        vmtsim run
        vmtsim run -c examples.yaml -O out/run1 --seed 7
        vmtsim -o json run -c examples.yaml
    """
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        write_resolved(config, out_dir)
        result = run(config)
        metrics = result.metrics.to_dict()
        write_json(out_dir / "metrics.json", metrics)
        write_csv(out_dir / "windows.csv", result.window_rows(), window_columns())

    get_printer().print(metrics, metrics_columns())
    err_console.print(f"Results written to {out_dir}")
