"""Workload and model tools: USL fitting, ruleset and trace generation, solver benchmark."""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import Any

import typer

from vmtsim.commands.common import (
    err_console,
    get_printer,
    guarded,
    parse_histogram,
    parse_list,
    progress_bar,
    resolve_config,
    resolve_out,
)
from vmtsim.config import ConfigError, write_resolved
from vmtsim.engine.experiments import calibrate_usl, derive
from vmtsim.engine.simulator import load_policies, prepare_workload
from vmtsim.optimizer.solver import benchmark_heuristic
from vmtsim.optimizer.usl import FitError, UslFit, fit_usl_detailed
from vmtsim.output import benchmark_columns, usl_columns, write_csv, write_json
from vmtsim.traffic import write_trace
from vmtsim.utils.rules import format_ruleset

logger = logging.getLogger(__name__)

SAMPLE_HEADER = ("x_mpps", "throughput_mpps", "n")


def parse_samples(text: str) -> list[tuple[float, float, int]]:
    """Parse ``x_mpps,throughput_mpps,n`` rows; a header row is optional.

    Raises:
        FitError: On a malformed row
    """
    samples: list[tuple[float, float, int]] = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].startswith("#") or (lineno == 1 and row[0].strip() == SAMPLE_HEADER[0]):
            continue
        if len(row) != 3:
            raise FitError(f"Samples line {lineno}: expected 3 columns, got {len(row)}")
        try:
            samples.append((float(row[0]), float(row[1]), int(row[2])))
        except ValueError as e:
            raise FitError(f"Samples line {lineno}: {e}") from e
    return samples


def fit_summary(fit: UslFit) -> dict[str, Any]:
    p = fit.params
    return {
        "alpha0": p.alpha0,
        "alpha1": p.alpha1,
        "beta0": p.beta0,
        "beta1": p.beta1,
        "rss": fit.rss,
        "per_count": {str(n): {"a": a, "b": b} for n, (a, b) in sorted(fit.per_count.items())},
    }


def fit_usl_command(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Configuration used for calibration runs"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
    samples_file: Path | None = typer.Option(
        None, "--samples", "-s", help="CSV of x_mpps,throughput_mpps,n samples; calibrate by simulation if omitted"
    ),
    jobs: int = typer.Option(1, "--jobs", "-j", min=1, help="Calibration runs simulated in parallel"),
) -> None:
    """Fit USL parameters from window samples.

    With --samples the fit uses the given measurements. Otherwise short
    single-table simulations over a grid of PMU counts and loads provide them.
    Writes usl.json (parameters) and usl.csv (per-count curve coefficients).

    Examples:
        vmtsim fit-usl --samples samples.csv
        vmtsim fit-usl -c base.yaml --jobs 4
    """
    out_dir = resolve_out(out)
    with guarded(out_dir):
        if samples_file is not None:
            if not samples_file.exists():
                raise FitError(f"Samples file {samples_file} does not exist")
            fit = fit_usl_detailed(parse_samples(samples_file.read_text(encoding="utf-8")))
        else:
            config = resolve_config(config_file, seed)
            write_resolved(config, out_dir)
            with progress_bar("Calibrating"):
                fit = calibrate_usl(config, jobs=jobs)
        summary = fit_summary(fit)
        write_json(out_dir / "usl.json", summary)
        rows = [{"n": n, "a": a, "b": b} for n, (a, b) in sorted(fit.per_count.items())]
        write_csv(out_dir / "usl.csv", rows, usl_columns())

    get_printer().print({k: v for k, v in summary.items() if k != "per_count"})
    err_console.print(f"Wrote {out_dir / 'usl.json'}")


def gen_rules(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Configuration naming the VMT key fields"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
    vmt: int | None = typer.Option(None, "--vmt", help="Only this VMT [default: all]"),
    count: int | None = typer.Option(None, "--count", "-n", min=1, help="Rules per VMT [default: configured]"),
    histogram: str | None = typer.Option(
        None, "--histogram", help="Prefix-length histogram as LEN:WEIGHT,... [default: configured]"
    ),
) -> None:
    """Generate rulesets, one rules-<vmt>.txt per VMT.

    The same seed gives the same rules a simulation would generate, so the
    files can be fed back through each VMT's rules.file.

    Examples:
        vmtsim gen-rules -c base.yaml
        vmtsim gen-rules --vmt 0 --count 10000 --histogram 16:0.2,24:0.5,32:0.3
    """
    hist = parse_histogram(histogram)
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        if vmt is not None and all(v.id != vmt for v in config.vmts):
            raise ConfigError(f"No VMT with id {vmt}", "vmts")

        def update(data: dict[str, Any]) -> None:
            for v in data["vmts"]:
                v["rules"]["file"] = None
                if count is not None:
                    v["rules"]["count"] = count
                if hist is not None:
                    v["rules"]["histogram"] = hist

        config = derive(config, update)
        policies = load_policies(config)
        rows = []
        for vid, (fields, rules) in sorted(policies.items()):
            if vmt is not None and vid != vmt:
                continue
            path = out_dir / f"rules-{vid}.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(format_ruleset(fields, rules), encoding="utf-8")
            rows.append({"vmt": vid, "rules": len(rules), "file": str(path)})

    get_printer().print(rows)


def gen_trace(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Configuration with the traffic section"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
) -> None:
    """Generate the configured traffic as trace.csv.

    The trace holds time_ns,flow_id,vmt_entry_key_hex rows and replays through
    traffic.trace.

    Examples:
        vmtsim gen-trace -c base.yaml -O traces --seed 3
    """
    out_dir = resolve_out(out)
    with guarded(out_dir):
        config = resolve_config(config_file, seed)
        write_resolved(config, out_dir)
        _, trace = prepare_workload(config)
        path = out_dir / "trace.csv"
        write_trace(trace, path)

    get_printer().print(
        {
            "packets": len(trace),
            "flows": len(trace.keys),
            "duration_ns": trace.duration_ns,
            "rate_pps": trace.rate_pps(),
            "file": str(path),
        }
    )


def benchmark(
    sizes: str | None = typer.Option(None, "--sizes", help="Comma-separated chain lengths [default: 10,25,50,100]"),
    extra: int = typer.Option(10, "--extra", min=0, help="PMUs beyond one per node"),
    out: Path | None = typer.Option(None, "--out", "-O", help="Output directory [default: out]"),
) -> None:
    """Time the heuristic allocation solver on chain CFGs of growing size.

    Examples:
        vmtsim benchmark
        vmtsim benchmark --sizes 50,100,200 --extra 20
    """
    size_list = parse_list(sizes, int, "--sizes")
    out_dir = resolve_out(out)
    with guarded(out_dir):
        rows = benchmark_heuristic(size_list or (10, 25, 50, 100), extra)
        write_csv(out_dir / "benchmark.csv", rows, benchmark_columns())

    get_printer().print(rows, benchmark_columns())
