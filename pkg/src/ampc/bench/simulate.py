"""
Closed-loop simulation and controller comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.errors import OCPInfeasible
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import step, to_original
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

STOP_HORIZON = "horizon"
STOP_RADIUS = "stop_radius"
STOP_DIVERGED = "diverged"
STOP_CONTROLLER = "controller_failed"

DIVERGENCE_NORM = 1e3
PHASE_HEADER = "t,x1,x2,u,x1_orig,x2_orig,u_orig"


@dataclass
class SimResult:
    tag: str
    states: NDArray[np.float64]
    inputs: NDArray[np.float64]
    cost: float
    constraint_violations: int
    steps_to_terminal: Optional[int]
    final_norm: float
    stopped: str

    @property
    def reached_terminal(self) -> bool:
        return self.steps_to_terminal is not None

    def summary(self) -> dict[str, Any]:
        return {
            "tag": self.tag,
            "steps": int(self.inputs.size),
            "cost": self.cost,
            "violations": self.constraint_violations,
            "steps_to_terminal": self.steps_to_terminal,
            "final_norm": self.final_norm,
            "stopped": self.stopped,
        }


def simulate(
    controller: Callable[[NDArray[np.float64]], float],
    x0: ArrayLike,
    T: int,
    design: RMPCDesign,
    tag: Optional[str] = None,
    stop_radius: Optional[float] = None,
) -> SimResult:
    """
    Roll out x(t+1) = f(x(t), u(t)) for at most T steps, accumulating the stage
    cost and counting steps with (x, u) outside X x U. Stops early once
    ||x|| <= stop_radius, on divergence, or when the controller has no answer.

    Raises:
        ValueError if T < 1.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    plant = design.plant
    ti = design.terminal
    tag = tag if tag is not None else getattr(
        controller, "tag", type(controller).__name__
    )
    x = np.asarray(x0, dtype=float).reshape(2).copy()
    states = [x]
    inputs: list[float] = []
    cost = 0.0
    violations = 0
    steps_to_terminal: Optional[int] = None
    stopped = STOP_HORIZON
    for t in range(T):
        if steps_to_terminal is None and ti.contains(x):
            steps_to_terminal = t
        if stop_radius is not None and np.linalg.norm(x) <= stop_radius:
            stopped = STOP_RADIUS
            break
        try:
            u = float(controller(x))
        except OCPInfeasible:
            stopped = STOP_CONTROLLER
            violations += 1
            break
        if not np.isfinite(u):
            stopped = STOP_DIVERGED
            violations += 1
            break
        if not (design.X.contains(x) and design.U.contains(u)):
            violations += 1
        cost += float(x @ plant.Q @ x) + plant.R * u * u
        inputs.append(u)
        with np.errstate(over="ignore", invalid="ignore"):
            x = step(plant, x, u)
        states.append(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            stopped = STOP_DIVERGED
            violations += 1
            break
    else:
        if steps_to_terminal is None and ti.contains(x):
            steps_to_terminal = T
    return SimResult(
        tag=tag,
        states=np.array(states),
        inputs=np.array(inputs),
        cost=cost,
        constraint_violations=violations,
        steps_to_terminal=steps_to_terminal,
        final_norm=float(np.linalg.norm(states[-1])),
        stopped=stopped,
    )


def closed_loop_contract(
    controller: Callable[[NDArray[np.float64]], float],
    x0s: Sequence[ArrayLike],
    design: RMPCDesign,
    T: int,
) -> dict[str, Any]:
    """
    Simulate from each x0 and summarize: runs without violations that reached
    the terminal set, and the largest final-state norm. Controllers with a
    `reset` method (warm-started oracles) are reset before every run.
    """
    reset = getattr(controller, "reset", None)
    results = []
    for x0 in x0s:
        if callable(reset):
            reset()
        results.append(simulate(controller, x0, T, design))
    passed = [r.constraint_violations == 0 and r.reached_terminal for r in results]
    for x0, r, ok in zip(x0s, results, passed):
        if not ok:
            logger.warning(
                f"Closed loop from {np.asarray(x0).tolist()}: {r.constraint_violations} "
                f"violation(s), steps_to_terminal={r.steps_to_terminal}"
            )
    return {
        "runs": len(results),
        "passed": int(sum(passed)),
        "max_violations": max((r.constraint_violations for r in results), default=0),
        "max_final_norm": max((r.final_norm for r in results), default=0.0),
        "max_steps_to_terminal": max(
            (r.steps_to_terminal for r in results if r.steps_to_terminal is not None),
            default=0,
        ),
    }


def find_cost_gap(
    ampc: Callable[[NDArray[np.float64]], float],
    lqr: Callable[[NDArray[np.float64]], float],
    pool: Sequence[ArrayLike],
    design: RMPCDesign,
    T: int = 2000,
    stop_radius: float = 1e-4,
    ratio: float = 3.0,
) -> tuple[Optional[NDArray[np.float64]], list[tuple[SimResult, SimResult]]]:
    """
    First x0 in the pool where the saturated LQR costs at least `ratio` times
    the AMPC, both simulated until ||x|| <= stop_radius or T steps.
    """
    pairs = []
    for x0 in pool:
        a = simulate(ampc, x0, T, design, stop_radius=stop_radius)
        b = simulate(lqr, x0, T, design, stop_radius=stop_radius)
        pairs.append((a, b))
        if a.cost > 0.0 and b.cost >= ratio * a.cost:
            logger.info(
                f"LQR cost {b.cost:.4g} is {b.cost / a.cost:.2f}x the AMPC cost "
                f"{a.cost:.4g} from x0={np.asarray(x0).tolist()}"
            )
            return np.asarray(x0, dtype=float), pairs
    logger.info(f"No x0 among {len(pool)} with an LQR/AMPC cost ratio of {ratio}")
    return None, pairs


def write_sim_csv(
    result: SimResult, path: Union[str, Path], design: RMPCDesign
) -> None:
    """Phase-plot and input-trace data in shifted and reactor coordinates."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = result.inputs.size
    u = np.append(result.inputs, np.nan)[: result.states.shape[0]]
    x_orig, u_orig = to_original(design.plant, result.states, u)
    assert u_orig is not None
    lines = [PHASE_HEADER]
    for t in range(result.states.shape[0]):
        u_txt = f"{u[t]:.17g}" if t < n else ""
        uo_txt = f"{u_orig[t]:.17g}" if t < n else ""
        lines.append(
            f"{t},{result.states[t, 0]:.17g},{result.states[t, 1]:.17g},{u_txt},"
            f"{x_orig[t, 0]:.17g},{x_orig[t, 1]:.17g},{uo_txt}"
        )
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
