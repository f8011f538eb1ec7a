"""Helpers shared by the command modules: config resolution, error mapping, progress."""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import TypeVar

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from vmtsim.config import ConfigError, SimConfig, apply_overrides, get_env_override, load_config
from vmtsim.engine.simulator import DeadlockError
from vmtsim.output import Printer, write_json

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)

T = TypeVar("T")

EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_DEADLOCK = 3

DEFAULT_OUT = Path("out")


def is_verbose() -> bool:
    """Check if verbose mode is enabled."""
    from vmtsim.cli import state

    return state.verbose


def get_printer() -> Printer:
    """Printer for the output format chosen on the root command."""
    from vmtsim.cli import state

    return Printer(state.output)


def exit_code(exc: BaseException) -> int:
    """Process exit code for an exception escaping a command.

    Validation problems (configuration, rule and CFG files, fits, infeasible
    allocations) exit with 2, a drain timeout with 3, anything else with 1.
    """
    if isinstance(exc, DeadlockError):
        return EXIT_DEADLOCK
    # RuleError, TrieError, CfgError, FitError and AllocationError are ValueErrors
    if isinstance(exc, (ConfigError, ValidationError, ValueError)):
        return EXIT_VALIDATION
    return EXIT_FAILURE


def resolve_config(path: Path | None, seed: int | None = None) -> SimConfig:
    """Load the configuration and apply ``--seed`` / environment overrides."""
    if path is None:
        env_path = get_env_override("config")
        path = Path(env_path) if env_path else None
    return apply_overrides(load_config(path), seed)


def resolve_out(out: Path | None) -> Path:
    """Output directory from ``--out``, ``VMTSIM_OUT`` or the default."""
    if out is not None:
        return out
    env_out = get_env_override("out")
    return Path(env_out) if env_out else DEFAULT_OUT


@contextmanager
def guarded(out_dir: Path | None = None) -> Iterator[None]:
    """Report domain errors and exit with their mapped code.

    A deadlock also writes its diagnostics to ``deadlock.json`` in ``out_dir``.
    """
    try:
        yield
    except typer.Exit:
        raise
    except DeadlockError as e:
        console.print(f"[red]Deadlock:[/red] {e.message}")
        if out_dir is not None:
            path = write_json(out_dir / "deadlock.json", e.diagnostics)
            console.print(f"Diagnostics written to {path}")
        elif is_verbose():
            err_console.print(json.dumps(e.diagnostics, indent=2, sort_keys=True, default=str))
        raise typer.Exit(EXIT_DEADLOCK) from e
    except (ConfigError, ValidationError, ValueError) as e:
        if is_verbose():
            console.print_exception()
        else:
            console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(EXIT_VALIDATION) from e


@contextmanager
def progress_bar(description: str) -> Iterator[Callable[[int, int], None]]:
    """Rich progress bar driven by ``(done, total)`` callbacks."""
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=err_console,
        transient=True,
    ) as progress:
        task = progress.add_task(description, total=None)

        def update(done: int, total: int) -> None:
            progress.update(task, completed=done, total=total)

        yield update


def parse_list(text: str | None, kind: Callable[[str], T], option: str) -> list[T] | None:
    """Parse a comma-separated option value; None when the option was not given."""
    if text is None:
        return None
    try:
        return [kind(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"{option}: {e}") from e


def parse_histogram(text: str | None) -> dict[int, float] | None:
    """Parse ``LEN:WEIGHT,...`` into a prefix-length histogram."""
    if text is None:
        return None
    out: dict[int, float] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        length, sep, weight = part.partition(":")
        if not sep:
            raise typer.BadParameter(f"--histogram: expected LEN:WEIGHT, got {part!r}")
        try:
            out[int(length)] = float(weight)
        except ValueError as e:
            raise typer.BadParameter(f"--histogram: {e}") from e
    return out
