from __future__ import annotations

from typing import Optional

import typer

from ampc.utils.logger import set_global_log_level

try:
    from ampc import __version__
except Exception:
    __version__ = "0.0.0.dev0"

app = typer.Typer(
    help="AMPC: approximate robust MPC with statistically validated networks."
)


def _version_callback(value: bool) -> None:
    if value:
        typer.echo(__version__)
        raise typer.Exit()


@app.callback(invoke_without_command=True)  # type: ignore[misc]
def main(
    ctx: typer.Context,
    log_level: Optional[str] = typer.Option(
        None, "--log-level", help="Set global log level (DEBUG/INFO/WARNING/ERROR)"
    ),
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        help="Show AMPC version and exit",
        callback=_version_callback,
        is_eager=True,
    ),
) -> None:
    if log_level:
        set_global_log_level(log_level)


from ampc.cli.pipeline import pipeline_cmd
from ampc.cli.stages import (
    bench_cmd,
    certify_cmd,
    design_cmd,
    sample_cmd,
    simulate_cmd,
    solve_one_cmd,
    train_cmd,
)

app.command("design")(design_cmd)
app.command("sample")(sample_cmd)
app.command("train")(train_cmd)
app.command("certify")(certify_cmd)
app.command("simulate")(simulate_cmd)
app.command("bench")(bench_cmd)
app.command("pipeline")(pipeline_cmd)
app.command("solve-one")(solve_one_cmd)


def run_cli() -> None:
    app()
