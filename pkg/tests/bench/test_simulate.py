from pathlib import Path

import numpy as np
import pytest
from ml_collections import ConfigDict

from ampc.bench.controllers import (
    SaturatedLinearController,
    ZeroController,
    lqr_controller,
)
from ampc.bench.simulate import (
    PHASE_HEADER,
    STOP_CONTROLLER,
    STOP_DIVERGED,
    STOP_HORIZON,
    STOP_RADIUS,
    closed_loop_contract,
    find_cost_gap,
    simulate,
    write_sim_csv,
)
from ampc.errors import OCPInfeasible
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import step
from ampc.mpc.ocp import RMPCController
from ampc.validation.certifier import RMPCOracle


def terminal_point(design: RMPCDesign, fraction: float) -> np.ndarray:
    d = np.array([1.0, -1.0]) / np.sqrt(2.0)
    ti = design.terminal
    return np.sqrt(fraction * ti.alpha_f / float(d @ ti.P @ d)) * d


class FailingController:
    tag = "failing"

    def __call__(self, x: np.ndarray) -> float:
        raise OCPInfeasible("no solution")


def test_zero_input_at_origin_costs_nothing(small_design: RMPCDesign) -> None:
    result = simulate(ZeroController(), np.zeros(2), 50, small_design)
    assert result.tag == "zero"
    assert result.cost == pytest.approx(0.0, abs=1e-20)
    assert result.constraint_violations == 0
    assert result.steps_to_terminal == 0
    assert result.stopped == STOP_HORIZON
    assert result.inputs.shape == (50,)
    assert result.states.shape == (51, 2)
    assert result.final_norm == pytest.approx(0.0, abs=1e-12)


def test_stop_radius(small_design: RMPCDesign) -> None:
    result = simulate(ZeroController(), np.zeros(2), 50, small_design, stop_radius=1e-4)
    assert result.stopped == STOP_RADIUS
    assert result.inputs.size == 0
    assert result.reached_terminal


def test_lqr_converges_from_terminal_set(small_design: RMPCDesign) -> None:
    x0 = terminal_point(small_design, 0.9)
    result = simulate(lqr_controller(small_design), x0, 500, small_design)
    assert result.constraint_violations == 0
    assert result.steps_to_terminal == 0
    assert result.final_norm < 0.1 * np.linalg.norm(x0)
    plant = small_design.plant
    expected = sum(
        float(x @ plant.Q @ x) + plant.R * u * u
        for x, u in zip(result.states[:-1], result.inputs)
    )
    assert result.cost == pytest.approx(expected)


def test_simulation_is_deterministic(small_design: RMPCDesign) -> None:
    x0 = terminal_point(small_design, 0.5)
    a = simulate(lqr_controller(small_design), x0, 100, small_design)
    b = simulate(lqr_controller(small_design), x0, 100, small_design)
    assert np.array_equal(a.states, b.states)
    assert a.cost == b.cost


def test_controller_failure_stops_run(small_design: RMPCDesign) -> None:
    result = simulate(FailingController(), np.zeros(2), 10, small_design)
    assert result.stopped == STOP_CONTROLLER
    assert result.constraint_violations == 1
    assert result.inputs.size == 0


def test_divergence_stops_run(small_design: RMPCDesign) -> None:
    result = simulate(lambda x: float("nan"), np.zeros(2), 10, small_design, tag="nan")
    assert result.tag == "nan"
    assert result.stopped == STOP_DIVERGED
    assert result.constraint_violations >= 1
    assert result.steps_to_terminal == 0


def test_input_violations_are_counted(small_design: RMPCDesign) -> None:
    _, u_hi = small_design.U.box_bounds()
    result = simulate(lambda x: float(u_hi[0]) + 0.1, np.zeros(2), 3, small_design)
    assert result.constraint_violations >= 1


def test_rejects_empty_horizon(small_design: RMPCDesign) -> None:
    with pytest.raises(ValueError):
        simulate(ZeroController(), np.zeros(2), 0, small_design)


def test_closed_loop_contract(small_design: RMPCDesign) -> None:
    x0s = [terminal_point(small_design, 0.3), terminal_point(small_design, 0.8)]
    contract = closed_loop_contract(
        lqr_controller(small_design), x0s, small_design, 200
    )
    assert contract["runs"] == 2
    assert contract["passed"] == 2
    assert contract["max_violations"] == 0
    assert contract["max_steps_to_terminal"] == 0

    failing = closed_loop_contract(FailingController(), x0s, small_design, 200)
    assert failing["passed"] == 0
    assert failing["max_violations"] == 1


def test_find_cost_gap(small_design: RMPCDesign) -> None:
    pool = [terminal_point(small_design, 0.5), terminal_point(small_design, 0.9)]
    lqr = lqr_controller(small_design)
    x0, pairs = find_cost_gap(lqr, lqr, pool, small_design, T=300)
    assert x0 is None
    assert len(pairs) == 2
    for a, b in pairs:
        assert a.cost == b.cost

    x0, pairs = find_cost_gap(lqr, lqr, pool, small_design, T=300, ratio=1.0)
    assert x0 is not None
    assert np.array_equal(x0, pool[0])
    assert len(pairs) == 1


def test_find_cost_gap_detects_poor_controller(small_design: RMPCDesign) -> None:
    lqr = lqr_controller(small_design)
    u_lo, u_hi = small_design.U.box_bounds()
    # a weak gain converges slowly and accumulates more cost
    weak = SaturatedLinearController(0.05 * lqr.K, u_lo[0], u_hi[0], tag="weak")
    pool = [terminal_point(small_design, 0.9)]
    x0, pairs = find_cost_gap(lqr, weak, pool, small_design, T=3000, ratio=1.01)
    assert pairs[0][1].cost > pairs[0][0].cost
    assert x0 is not None


def test_write_sim_csv(small_design: RMPCDesign, tmp_path: Path) -> None:
    result = simulate(
        lqr_controller(small_design), terminal_point(small_design, 0.5), 5, small_design
    )
    path = tmp_path / "sim_lqr.csv"
    write_sim_csv(result, path, small_design)
    lines = path.read_text().splitlines()
    assert lines[0] == PHASE_HEADER
    assert len(lines) == 1 + 6
    first = lines[1].split(",")
    assert int(first[0]) == 0
    x_e = small_design.plant.x_e
    assert float(first[4]) == pytest.approx(result.states[0, 0] + x_e[0])
    assert float(first[6]) == pytest.approx(result.inputs[0] + small_design.plant.u_e)
    last = lines[-1].split(",")
    assert last[3] == "" and last[6] == ""


def closed_loop_pool(design: RMPCDesign) -> list[np.ndarray]:
    """Ten level sets of the terminal ellipse on ten rays, then a 10x10 grid of X."""
    ti = design.terminal
    pool = []
    for fraction in np.linspace(0.1, 1.0, 10):
        for angle in np.linspace(0.0, 2.0 * np.pi, 10, endpoint=False):
            d = np.array([np.cos(angle), np.sin(angle)])
            pool.append(np.sqrt(fraction * ti.alpha_f / float(d @ ti.P @ d)) * d)
    lo, hi = design.X.box_bounds()
    axis = np.linspace(0.9 * lo[0], 0.9 * hi[0], 10)
    pool.extend(np.array([a, b]) for a in axis for b in axis)
    return pool


def run_rmpc_tube(
    oracle: RMPCOracle, x0: np.ndarray, design: RMPCDesign, sign: float, t_max: int
) -> int:
    """
    Apply u + d with d = sign * eta * (-1)^t and check every visited state.
    Returns the first step at which x lies in X_f.
    """
    plant, ti = design.plant, design.terminal
    X, U = design.X, design.U
    d0 = sign * design.eta
    oracle.reset()
    x = x0
    for t in range(t_max):
        sol = oracle.solve(x)
        assert sol.optimal, f"no solution at step {t} from {x0.tolist()}"
        assert X.contains(x, tol=1e-9)
        for k in range(sol.horizon):
            X_k, U_k = design.stage_sets(k)
            assert X_k.contains(sol.states[k], tol=1e-6)
            assert U_k.contains(sol.inputs[k], tol=1e-6)
        assert ti.V_f(sol.states[-1]) <= ti.alpha_f + 1e-8
        u = float(sol.inputs[0]) + d0 * (-1.0) ** t
        assert U.contains(u, tol=1e-9)
        if ti.contains(x):
            return t
        x = step(plant, x, u)
    raise AssertionError(f"X_f not reached within {t_max} steps from {x0.tolist()}")


@pytest.mark.slow  # type: ignore[misc]
def test_rmpc_closed_loop_is_safe(
    small_design: RMPCDesign, small_config: ConfigDict
) -> None:
    oracle = RMPCOracle(RMPCController.from_config(small_design, small_config))
    feasible = []
    for x0 in closed_loop_pool(small_design):
        oracle.reset()
        if oracle.is_feasible(x0):
            feasible.append(x0)
    assert len(feasible) >= 100

    for i, x0 in enumerate(feasible):
        run_rmpc_tube(oracle, x0, small_design, sign=0.0, t_max=1000)
        if i % 3 == 0:
            run_rmpc_tube(oracle, x0, small_design, sign=1.0, t_max=1000)

    oracle.reset()
    contract = closed_loop_contract(oracle, feasible[::10], small_design, 1000)
    assert contract["passed"] == contract["runs"]
    assert contract["max_violations"] == 0
