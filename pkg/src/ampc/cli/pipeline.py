from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from ampc.cli.common import (
    CONFIG_OPTION,
    OUT_OPTION,
    OVERRIDE_OPTION,
    collect_overrides,
    config_path_arg,
    exit_on_error,
)
from ampc.core.runner import run_pipeline
from ampc.utils.logger import get_logger

logger = get_logger(__name__)


def pipeline_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    workers: Optional[int] = typer.Option(
        None, "--workers", help="Worker processes for sampling and validation."
    ),
    bench: bool = typer.Option(
        True, "--bench/--no-bench", help="Run the closed-loop benchmark at the end."
    ),
) -> None:
    """
    Run design, sampling, training and certification (retraining on failure),
    then the benchmark. Exits with the failing stage's code.
    """
    overrides = collect_overrides(override, workers=workers)
    with exit_on_error():
        result = run_pipeline(config_path_arg(cfg), overrides, out, bench=bench)
    typer.echo(f"Run ID: {result.run_id}")
    if not result.ok:
        typer.echo(f"Failed stage: {result.failed_stage}", err=True)
        raise typer.Exit(code=result.exit_code)
