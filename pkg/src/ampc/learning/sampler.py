"""
Offline sampling of the robust MPC feedback over a uniform grid of X.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from ampc.constants import SHARD_SUFFIX
from ampc.core.config import read_key_value_file, write_key_value_file
from ampc.core.stamp import format_shard_name, is_valid_shard_name
from ampc.errors import ArtifactFormatError
from ampc.mpc.design import RMPCDesign
from ampc.mpc.ocp import OCPSolution, RMPCController, shift_warm_start
from ampc.mpc.polytope import grid_axis
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

CSV_HEADER = "x1,x2,u"
META_FILENAME = "meta.txt"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feasible grid points with their RMPC input; records is an (m, 3) array."""

    records: NDArray[np.float64]
    grid_step: float
    count_total: int
    count_feasible: int = -1

    def __post_init__(self) -> None:
        records = np.array(self.records, dtype=float).reshape(-1, 3)
        records.setflags(write=False)
        object.__setattr__(self, "records", records)
        if self.count_feasible < 0:
            object.__setattr__(self, "count_feasible", int(records.shape[0]))
        if self.count_feasible != records.shape[0]:
            raise ValueError(
                f"count_feasible={self.count_feasible} but {records.shape[0]} records"
            )
        if self.count_total < self.count_feasible:
            raise ValueError(
                f"count_total={self.count_total} below count_feasible={self.count_feasible}"
            )

    def __len__(self) -> int:
        return int(self.records.shape[0])

    @property
    def states(self) -> NDArray[np.float64]:
        return self.records[:, :2]

    @property
    def inputs(self) -> NDArray[np.float64]:
        return self.records[:, 2]

    @property
    def count_infeasible(self) -> int:
        return self.count_total - self.count_feasible

    @property
    def feasible_fraction(self) -> float:
        return self.count_feasible / self.count_total if self.count_total else 0.0

    def has_duplicates(self) -> bool:
        return len(np.unique(self.states, axis=0)) != len(self)

    def same_values(self, other: Dataset) -> bool:
        return (
            np.array_equal(self.records, other.records)
            and self.count_total == other.count_total
            and (self.grid_step == other.grid_step or (
                math.isnan(self.grid_step) and math.isnan(other.grid_step)
            ))
        )


def serpentine_order(n_x1: int, rows: range) -> list[tuple[int, int]]:
    """(row, column) pairs, x1 alternating direction from one row of x2 to the next."""
    order: list[tuple[int, int]] = []
    for r in rows:
        cols = range(n_x1) if r % 2 == 0 else range(n_x1 - 1, -1, -1)
        order.extend((r, c) for c in cols)
    return order


def _sweep(
    design: RMPCDesign,
    settings: Mapping[str, Any],
    axis1: NDArray[np.float64],
    axis2: NDArray[np.float64],
    rows: range,
    warm_start: bool,
    progress: bool,
    position: int = 0,
) -> tuple[list[tuple[float, float, float]], int]:
    controller = RMPCController.from_config(design, settings)
    order = serpentine_order(axis1.size, rows)
    records: list[tuple[float, float, float]] = []
    warm: Optional[OCPSolution] = None
    with tqdm(
        total=len(order),
        desc=f"sample[{position}]",
        position=position,
        disable=not progress,
        leave=False,
    ) as pbar:
        for r, c in order:
            x0 = np.array([axis1[c], axis2[r]])
            sol = controller.solve(x0, warm=warm if warm_start else None)
            if sol.optimal:
                records.append((float(x0[0]), float(x0[1]), float(sol.inputs[0])))
                warm = shift_warm_start(sol, design)
            else:
                # neighbours of an infeasible point restart cold
                warm = None
            pbar.update(1)
    return records, len(order)


def _sweep_job(args: tuple[Any, ...]) -> tuple[list[tuple[float, float, float]], int]:
    return _sweep(*args)


def partition_rows(n_rows: int, workers: int) -> list[range]:
    """Contiguous blocks of grid rows, one per worker (empty blocks dropped)."""
    workers = max(1, min(workers, n_rows))
    bounds = np.linspace(0, n_rows, workers + 1).round().astype(int)
    return [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def build_dataset(
    design: RMPCDesign,
    grid_step: float,
    settings: Optional[Mapping[str, Any]] = None,
    workers: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
    warm_start: bool = True,
    progress: bool = True,
) -> Dataset:
    """
    Solve the RMPC on every grid point of X (endpoints included) and keep the
    feasible ones. Rows of the grid are split across workers; each worker's
    records go to its own shard when `out_dir` is given.

    Raises:
        ValueError if grid_step is not positive, larger than the box or does not
            divide its side.
    """
    settings = dict(settings or {})
    lower, upper = design.X.box_bounds()
    axis1 = grid_axis(float(lower[0]), float(upper[0]), grid_step)
    axis2 = grid_axis(float(lower[1]), float(upper[1]), grid_step)
    blocks = partition_rows(axis2.size, workers)
    logger.info(
        f"Sampling {axis1.size * axis2.size} grid points (step {grid_step:g}) "
        f"with {len(blocks)} worker(s)"
    )

    jobs = [
        (design, settings, axis1, axis2, rows, warm_start, progress, i)
        for i, rows in enumerate(blocks)
    ]
    if len(jobs) == 1:
        results = [_sweep_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_sweep_job, jobs))

    shards = [np.array(recs, dtype=float).reshape(-1, 3) for recs, _ in results]
    total = sum(count for _, count in results)
    ds = Dataset(
        records=np.vstack(shards), grid_step=float(grid_step), count_total=total
    )
    logger.info(
        f"Dataset: {ds.count_feasible} feasible of {ds.count_total} grid points "
        f"({100.0 * ds.feasible_fraction:.1f}%)"
    )
    if out_dir is not None:
        save_dataset(ds, out_dir, shards=shards)
    return ds


def _format_row(row: NDArray[np.float64]) -> str:
    return ",".join(f"{v:.17g}" for v in row)


def write_shard(records: NDArray[np.float64], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_HEADER] + [_format_row(r) for r in np.asarray(records).reshape(-1, 3)]
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_shard(path: Union[str, Path]) -> NDArray[np.float64]:
    """
    Raises:
        ArtifactFormatError naming the line of a bad header or malformed row.
    """
    path = Path(path)
    rows: list[list[float]] = []
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ArtifactFormatError(
                path, 1, f"expected header '{CSV_HEADER}', got '{header}'"
            )
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise ArtifactFormatError(
                    path, lineno, f"expected 3 fields, got {len(fields)}"
                )
            try:
                values = [float(v) for v in fields]
            except ValueError as exc:
                raise ArtifactFormatError(path, lineno, str(exc)) from exc
            if not all(math.isfinite(v) for v in values):
                raise ArtifactFormatError(path, lineno, "non-finite value")
            rows.append(values)
    return np.array(rows, dtype=float).reshape(-1, 3)


def save_dataset(
    ds: Dataset,
    out_dir: Union[str, Path],
    shards: Optional[list[NDArray[np.float64]]] = None,
) -> list[Path]:
    """
    Write the dataset as `part-NNNN.csv` shards plus a metadata file.
    Stale shards from an earlier run are removed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for old in out_dir.glob(f"*{SHARD_SUFFIX}"):
        if is_valid_shard_name(old.name):
            old.unlink()
    parts = shards if shards is not None else [ds.records]
    paths = []
    for i, part in enumerate(parts):
        path = out_dir / format_shard_name(i)
        write_shard(part, path)
        paths.append(path)
    write_key_value_file(
        {
            "grid_step": ds.grid_step,
            "count_total": ds.count_total,
            "count_feasible": ds.count_feasible,
            "shards": len(paths),
        },
        out_dir / META_FILENAME,
        header="dataset metadata",
    )
    logger.info(f"Saved {len(ds)} records in {len(paths)} shard(s) to {out_dir}")
    return paths


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Load a shard directory (shards concatenated in name order) or a single CSV.

    Raises:
        FileNotFoundError if the directory holds no shards.
        ArtifactFormatError for malformed content.
    """
    path = Path(path)
    if path.is_file():
        records = read_shard(path)
        return Dataset(
            records=records, grid_step=float("nan"), count_total=len(records)
        )
    shard_paths = sorted(
        p for p in path.glob(f"*{SHARD_SUFFIX}") if is_valid_shard_name(p.name)
    )
    if not shard_paths:
        raise FileNotFoundError(f"No dataset shards in {path}")
    records = np.vstack([read_shard(p) for p in shard_paths])
    meta_path = path / META_FILENAME
    meta = read_key_value_file(meta_path) if meta_path.exists() else {}
    grid_step = float(meta.get("grid_step", float("nan")))
    count_total = int(meta.get("count_total", len(records)))
    if "count_feasible" in meta and int(meta["count_feasible"]) != len(records):
        raise ArtifactFormatError(
            meta_path,
            None,
            f"count_feasible={meta['count_feasible']} but {len(records)} records",
        )
    logger.info(
        f"Loaded {len(records)} records from {len(shard_paths)} shard(s) in {path}"
    )
    return Dataset(records=records, grid_step=grid_step, count_total=count_total)
