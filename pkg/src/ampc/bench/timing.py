from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.core.config import write_key_value_file
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

WARMUP_EVALUATIONS = 5


@dataclass(frozen=True)
class TimingResult:
    n_points: int
    mean_ocp_seconds: float
    median_ocp_seconds: float
    mean_nn_seconds: float
    median_nn_seconds: float
    speedup: float

    def summary(self) -> dict[str, Any]:
        return asdict(self)


def time_calls(
    fn: Callable[[NDArray[np.float64]], Any],
    states: Sequence[ArrayLike],
    warmup: int = WARMUP_EVALUATIONS,
) -> NDArray[np.float64]:
    """
    Wall-clock seconds per call on a monotonic clock; the first `warmup` calls
    are discarded.
    """
    xs = [np.asarray(x, dtype=float) for x in states]
    for x in xs[: min(warmup, len(xs))]:
        fn(x)
    times = np.empty(len(xs))
    for i, x in enumerate(xs):
        start = time.perf_counter()
        fn(x)
        times[i] = time.perf_counter() - start
    return times


def timing_comparison(
    solve: Callable[[NDArray[np.float64]], Any],
    evaluate: Callable[[NDArray[np.float64]], Any],
    states: Sequence[ArrayLike],
    warmup: int = WARMUP_EVALUATIONS,
) -> TimingResult:
    """
    Time a cold optimal-control solve and a network evaluation on the same states.

    Raises:
        ValueError on an empty state set.
    """
    if len(states) == 0:
        raise ValueError("Timing needs at least one state")
    t_ocp = time_calls(solve, states, warmup)
    t_nn = time_calls(evaluate, states, warmup)
    mean_nn = float(np.mean(t_nn))
    result = TimingResult(
        n_points=len(states),
        mean_ocp_seconds=float(np.mean(t_ocp)),
        median_ocp_seconds=float(np.median(t_ocp)),
        mean_nn_seconds=mean_nn,
        median_nn_seconds=float(np.median(t_nn)),
        speedup=float(np.mean(t_ocp)) / mean_nn if mean_nn > 0.0 else float("inf"),
    )
    logger.info(
        f"Timing over {result.n_points} states: OCP {1e3 * result.mean_ocp_seconds:.2f} ms, "
        f"network {1e3 * result.mean_nn_seconds:.4f} ms, speedup {result.speedup:.0f}x"
    )
    return result


def write_timing(result: TimingResult, path: Union[str, Path]) -> None:
    write_key_value_file(result.summary(), path, header="timing")
