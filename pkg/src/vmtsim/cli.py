"""Main CLI entry point for vmtsim.

Provides the root command and registers all subcommands.
"""

from __future__ import annotations

import logging
import sys

import typer
from rich.console import Console

from vmtsim import __version__
from vmtsim.commands import config as config_cmd
from vmtsim.commands import experiment as experiment_cmd
from vmtsim.commands import simulate as simulate_cmd
from vmtsim.commands import tools as tools_cmd
from vmtsim.commands.common import exit_code
from vmtsim.output import OutputFormat

# Create console for rich output
console = Console()

# Create the main Typer app
app = typer.Typer(
    name="vmtsim",
    help="A cycle-accurate simulator for virtualized match tables on programmable data planes.",
    add_completion=True,
    no_args_is_help=True,
    rich_markup_mode="rich",
)


# Global state for shared options
class State:
    """Global state shared across commands."""

    def __init__(self) -> None:
        self.output: OutputFormat = OutputFormat.TABLE
        self.verbose: bool = False


state = State()


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"vmtsim version {__version__}")
        raise typer.Exit()


@app.callback()
def callback(
    output: OutputFormat = typer.Option(
        OutputFormat.TABLE,
        "--output",
        "-o",
        help="Output format for command summaries",
        envvar="VMTSIM_OUTPUT",
    ),
    verbose: bool = typer.Option(
        False,
        "--verbose",
        "-v",
        help="Enable verbose/debug output",
        envvar="VMTSIM_VERBOSE",
    ),
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit",
    ),
) -> None:
    """vmtsim - simulate virtualized match tables cycle by cycle.

    Use 'vmtsim <command> --help' for more information about a command.

    Examples:
        vmtsim config init sim.yaml
        vmtsim run -c sim.yaml -O out/run1
        vmtsim sweep -c sim.yaml --jobs 4
        vmtsim adaptive -c sim.yaml --profile ramp
    """
    state.output = output
    state.verbose = verbose

    # Configure logging
    if verbose:
        logging.basicConfig(level=logging.DEBUG, format="%(levelname)s: %(message)s")
    else:
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")


# Register subcommands
app.command("run")(simulate_cmd.run_simulation)
app.command("sweep")(experiment_cmd.sweep)
app.command("stress")(experiment_cmd.stress)
app.command("adaptive")(experiment_cmd.adaptive)
app.command("fit-usl")(tools_cmd.fit_usl_command)
app.command("gen-rules")(tools_cmd.gen_rules)
app.command("gen-trace")(tools_cmd.gen_trace)
app.command("benchmark")(tools_cmd.benchmark)
app.add_typer(config_cmd.app, name="config", help="Show and initialize configuration")


def main_cli() -> None:
    """Main entry point for the CLI."""
    try:
        app()
    except Exception as e:
        if state.verbose:
            console.print_exception()
        else:
            console.print(f"[red]Error:[/red] {e}")
        sys.exit(exit_code(e))


# Alias for the entry point
def main() -> None:
    """Entry point alias."""
    main_cli()


if __name__ == "__main__":
    main_cli()
