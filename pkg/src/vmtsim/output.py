"""Output formatting for vmtsim.

Supports multiple output formats for command summaries:
- table: Rich tables (default)
- json: JSON output
- yaml: YAML output
- csv: CSV output

Result files (``metrics.json``, ``*.csv``) go through :func:`write_json` and
:func:`write_csv`, which are deterministic: identical data gives
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import yaml
from rich.console import Console
from rich.table import Table


class OutputFormat(str, Enum):
    """Supported output formats."""

    TABLE = "table"
    JSON = "json"
    YAML = "yaml"
    CSV = "csv"


def format_value(value: Any) -> str:
    """Stable text for a cell: floats with 10 significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


class Column:
    """Column definition for table and CSV output."""

    def __init__(
        self,
        key: str,
        header: str | None = None,
        formatter: Callable[[Any], str] | None = None,
    ) -> None:
        self.key = key
        self.header = header or key
        self.formatter = formatter or format_value

    def get_value(self, row: dict[str, Any]) -> str:
        """Extract and format value from a row."""
        # Support nested keys with dot notation
        value: Any = row
        for part in self.key.split("."):
            if isinstance(value, dict):
                value = value.get(part)
            else:
                value = None
                break
        return self.formatter(value)


class Formatter(ABC):
    """Base class for output formatters."""

    @abstractmethod
    def format(self, data: Any, columns: list[Column] | None = None) -> str:
        """Format data for output."""


def _rows(data: Any) -> list[dict[str, Any]]:
    if isinstance(data, dict):
        return [data]
    return list(data or [])


class TableFormatter(Formatter):
    """Format data as a table using Rich."""

    def format(self, data: Any, columns: list[Column] | None = None) -> str:
        rows = _rows(data)
        if not rows:
            return "No results."
        columns = columns or [Column(k, k.upper()) for k in rows[0]]

        table = Table(show_header=True, header_style="bold")
        for col in columns:
            table.add_column(col.header)
        for row in rows:
            table.add_row(*(col.get_value(row) for col in columns))

        with io.StringIO() as buf:
            Console(file=buf, width=160).print(table)
            return buf.getvalue()


class JSONFormatter(Formatter):
    """Format data as JSON with sorted keys."""

    def __init__(self, indent: int = 2) -> None:
        self.indent = indent

    def format(self, data: Any, columns: list[Column] | None = None) -> str:
        return json.dumps(data, indent=self.indent, sort_keys=True, default=str)


class YAMLFormatter(Formatter):
    """Format data as YAML."""

    def format(self, data: Any, columns: list[Column] | None = None) -> str:
        return yaml.dump(data, default_flow_style=False, sort_keys=False)


class CSVFormatter(Formatter):
    """Format data as CSV."""

    def format(self, data: Any, columns: list[Column] | None = None) -> str:
        rows = _rows(data)
        columns = columns or ([Column(k) for k in rows[0]] if rows else [])
        output = io.StringIO()
        if columns:
            writer = csv.writer(output, lineterminator="\n")
            writer.writerow([c.header for c in columns])
            for row in rows:
                writer.writerow([c.get_value(row) for c in columns])
        return output.getvalue()


class Printer:
    """Unified printer that handles all output formats."""

    def __init__(self, format: OutputFormat = OutputFormat.TABLE) -> None:
        self.format = format
        self._formatters: dict[OutputFormat, Formatter] = {
            OutputFormat.TABLE: TableFormatter(),
            OutputFormat.JSON: JSONFormatter(),
            OutputFormat.YAML: YAMLFormatter(),
            OutputFormat.CSV: CSVFormatter(),
        }

    def print(self, data: Any, columns: list[Column] | None = None) -> None:
        """Print data in the configured format."""
        print(self.format_str(data, columns))

    def format_str(self, data: Any, columns: list[Column] | None = None) -> str:
        """Format data and return as string."""
        return self._formatters[self.format].format(data, columns)


def write_csv(path: Path, rows: Iterable[dict[str, Any]], columns: Sequence[Column]) -> Path:
    """Write ``rows`` as CSV with a header row, even when there are no rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(CSVFormatter().format(list(rows), list(columns)) or _header(columns), encoding="utf-8")
    return path


def _header(columns: Sequence[Column]) -> str:
    return ",".join(c.header for c in columns) + "\n"


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(JSONFormatter().format(data) + "\n", encoding="utf-8")
    return path


# Predefined column sets for result files and summaries


def metrics_columns() -> list[Column]:
    """Headline metrics of a run."""
    return [
        Column("injected", "INJECTED"),
        Column("emitted", "EMITTED"),
        Column("dropped", "DROPPED"),
        Column("hit_rate", "HIT RATE", formatter=lambda x: f"{x:.4f}"),
        Column("latency.p50", "P50"),
        Column("latency.p95", "P95"),
        Column("latency.p99", "P99"),
        Column("throughput_pps", "THROUGHPUT (pps)", formatter=lambda x: f"{x:.4g}"),
        Column("mem_gbps", "MEM (GB/s)", formatter=lambda x: f"{x:.4g}"),
    ]


def sweep_columns() -> list[Column]:
    return [
        Column(k)
        for k in ("block_size", "vmt_capacity", "hit_rate", "p50_cycles", "p95_cycles", "mem_gbps")
    ]


def stress_columns() -> list[Column]:
    return [Column(k) for k in ("input_rate_pps", "pmu_count", "throughput_pps", "mem_gbps")]


def adaptive_columns() -> list[Column]:
    return [
        Column(k)
        for k in (
            "window",
            "time_us",
            "offered_pps",
            "static_hit_rate",
            "static_throughput_pps",
            "static_active_pmus",
            "adaptive_hit_rate",
            "adaptive_throughput_pps",
            "adaptive_active_pmus",
        )
    ]


def window_columns() -> list[Column]:
    """Per-window time series (``windows.csv``)."""
    return [
        Column(k)
        for k in (
            "window",
            "start_cycle",
            "injected",
            "emitted",
            "hits",
            "misses",
            "hit_rate",
            "throughput_pps",
            "mem_reads",
            "active_pmus",
            "stall_cycles",
        )
    ]


def usl_columns() -> list[Column]:
    return [Column(k) for k in ("n", "a", "b")]


def benchmark_columns() -> list[Column]:
    return [Column(k) for k in ("nodes", "pmus", "seconds", "objective")]
