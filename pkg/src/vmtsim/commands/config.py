"""Configuration management commands."""

from __future__ import annotations

from pathlib import Path

import typer
import yaml

from vmtsim.commands.common import console, guarded, resolve_config
from vmtsim.config import SimConfig, config_to_dict, get_config_path, save_config

app = typer.Typer(no_args_is_help=True, help="Manage vmtsim configuration")


@app.command("view")
def view_config(
    config_file: Path | None = typer.Option(None, "--config", "-c", help="Configuration file"),
    seed: int | None = typer.Option(None, "--seed", min=0, help="Override the configured seed"),
) -> None:
    """Display the resolved configuration with every default filled in."""
    with guarded():
        config = resolve_config(config_file, seed)
    console.print(yaml.dump(config_to_dict(config), default_flow_style=False, sort_keys=False))


@app.command("init")
def init_config(
    path: Path | None = typer.Argument(None, help="Where to write [default: user config file]"),
    force: bool = typer.Option(False, "--force", "-f", help="Overwrite an existing file"),
) -> None:
    """Write a configuration file with the built-in defaults.

    Examples:
        vmtsim config init
        vmtsim config init sim.yaml --force
    """
    target = path or get_config_path()
    if target.exists() and not force:
        console.print(f"[red]Error:[/red] {target} already exists (use --force to overwrite).")
        raise typer.Exit(1)
    save_config(SimConfig(), target)
    console.print(f"[green]Wrote default configuration to {target}[/green]")


@app.command("path")
def show_path() -> None:
    """Show the default configuration file path."""
    console.print(str(get_config_path()))
