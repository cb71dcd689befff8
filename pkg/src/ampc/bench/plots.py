"""
Figure data for the closed-loop report.

Each figure is written as a CSV (the data contract) and, when matplotlib is
installed, as an SVG rendered from the same arrays:

* ``surface``: the network feedback over the feasible dataset states
* ``phase``: state trajectories of the compared controllers
* ``inputs``: input traces of the compared controllers
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from ampc.bench.simulate import SimResult
from ampc.learning.network import NetworkParams, infer
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

FIGURE_NAMES = ("surface", "phase", "inputs")
SURFACE_HEADER = "x1,x2,u"
TRACE_HEADER = "tag,t,x1,x2,u"


def _write_lines(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def surface_data(
    params: NetworkParams, states: NDArray[np.float64]
) -> NDArray[np.float64]:
    states = np.asarray(states, dtype=float).reshape(-1, 2)
    u = np.asarray(infer(params, states), dtype=float).reshape(-1)
    return np.column_stack([states, u])


def write_surface_csv(data: NDArray[np.float64], path: Union[str, Path]) -> None:
    lines = [SURFACE_HEADER]
    lines += [f"{x1:.17g},{x2:.17g},{u:.17g}" for x1, x2, u in data]
    _write_lines(Path(path), lines)


def write_traces_csv(results: Sequence[SimResult], path: Union[str, Path]) -> None:
    """Long-format traces; the input column is empty on the final state."""
    lines = [TRACE_HEADER]
    for r in results:
        n = r.inputs.size
        for t, x in enumerate(r.states):
            u = f"{r.inputs[t]:.17g}" if t < n else ""
            lines.append(f"{r.tag},{t},{x[0]:.17g},{x[1]:.17g},{u}")
    _write_lines(Path(path), lines)


def _pyplot() -> Optional[Any]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    return plt


def _render_surface(plt: Any, data: NDArray[np.float64], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    sc = ax.tricontourf(data[:, 0], data[:, 1], data[:, 2], levels=30)
    fig.colorbar(sc, ax=ax, label="u")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def _render_phase(plt: Any, results: Sequence[SimResult], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    for r in results:
        ax.plot(r.states[:, 0], r.states[:, 1], label=r.tag)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def _render_inputs(plt: Any, results: Sequence[SimResult], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3))
    for r in results:
        ax.step(np.arange(r.inputs.size), r.inputs, where="post", label=r.tag)
    ax.set_xlabel("t")
    ax.set_ylabel("u")
    ax.legend()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def emit_figures(
    figures_dir: Union[str, Path],
    results: Sequence[SimResult],
    surface: Optional[NDArray[np.float64]] = None,
    render: bool = True,
) -> dict[str, Path]:
    """
    Write <name>.csv for every figure with data and the matching <name>.svg
    when rendering is possible. Returns the written paths keyed by file name.
    """
    figures_dir = Path(figures_dir)
    written: dict[str, Path] = {}
    if surface is not None and len(surface) > 0:
        written["surface.csv"] = figures_dir / "surface.csv"
        write_surface_csv(surface, written["surface.csv"])
    if results:
        for name in ("phase", "inputs"):
            written[f"{name}.csv"] = figures_dir / f"{name}.csv"
            write_traces_csv(results, written[f"{name}.csv"])

    if not render:
        return written
    plt = _pyplot()
    if plt is None:
        logger.warning("matplotlib is not installed; figures written as CSV only")
        return written
    if "surface.csv" in written and surface is not None:
        written["surface.svg"] = figures_dir / "surface.svg"
        _render_surface(plt, surface, written["surface.svg"])
    if results:
        written["phase.svg"] = figures_dir / "phase.svg"
        _render_phase(plt, results, written["phase.svg"])
        written["inputs.svg"] = figures_dir / "inputs.svg"
        _render_inputs(plt, results, written["inputs.svg"])
    logger.info(f"Wrote {len(written)} figure file(s) to {figures_dir}")
    return written
