from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Optional

import typer

from ampc.constants import EXIT_IO
from ampc.core.config import parse_overrides
from ampc.errors import AMPCError
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

CONFIG_OPTION = typer.Option(
    None, "--config", "-c", help="Config file (YAML or flat key = value text)."
)
OUT_OPTION = typer.Option(
    None, "--out", help="Output directory (relative paths hang off AMPC_ROOT)."
)
OVERRIDE_OPTION = typer.Option(
    None,
    "--override",
    "-o",
    help="Override config keys (key=value), e.g. -o grid_step=0.01",
)


def collect_overrides(
    override: Optional[list[str]], **named: Any
) -> dict[str, Any]:
    """`-o key=value` items plus any named option that was given."""
    try:
        out = parse_overrides(override)
    except ValueError as exc:
        raise typer.BadParameter(str(exc)) from exc
    out.update({k: v for k, v in named.items() if v is not None})
    return out


@contextmanager
def exit_on_error() -> Iterator[None]:
    """Map domain failures to their exit codes and I/O failures to EXIT_IO."""
    try:
        yield
    except AMPCError as exc:
        logger.error(str(exc))
        raise typer.Exit(code=exc.exit_code) from exc
    except OSError as exc:
        logger.error(f"I/O error: {exc}")
        raise typer.Exit(code=EXIT_IO) from exc
    except ValueError as exc:
        logger.error(f"Invalid input: {exc}")
        raise typer.Exit(code=1) from exc


def config_path_arg(cfg: Optional[Path]) -> Optional[Path]:
    if cfg is not None and not cfg.exists():
        raise typer.BadParameter(f"Config file {cfg} does not exist")
    return cfg
