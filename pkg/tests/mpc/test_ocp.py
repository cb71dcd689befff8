import numpy as np
import pytest

from ampc.errors import OCPInfeasible
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import step
from ampc.mpc.ocp import (
    INFEASIBLE,
    MAXITER,
    OPTIMAL,
    OCPSolution,
    RMPCController,
    shift_warm_start,
)
from ampc.mpc.qp import QP_MAXITER, ActiveSetQP, QPResult


def inside_terminal(
    design: RMPCDesign, fraction: float, angle: float = 0.7
) -> np.ndarray:
    """Point with V_f(x) = fraction * alpha_f along the given direction."""
    d = np.array([np.cos(angle), np.sin(angle)])
    scale = np.sqrt(
        fraction * design.terminal.alpha_f / float(d @ design.terminal.P @ d)
    )
    return scale * d


def check_solution(sol: OCPSolution, design: RMPCDesign) -> None:
    plant = design.plant
    for k in range(sol.horizon):
        X_k, U_k = design.stage_sets(k)
        assert X_k.contains(sol.states[k], tol=1e-6)
        assert U_k.contains(sol.inputs[k], tol=1e-6)
        assert np.allclose(
            step(plant, sol.states[k], sol.inputs[k]), sol.states[k + 1], atol=1e-8
        )
    assert design.terminal.V_f(sol.states[-1]) <= design.terminal.alpha_f + 1e-8


def test_origin_costs_nothing(small_controller: RMPCController) -> None:
    sol = small_controller.solve(np.zeros(2))
    assert sol.status == OPTIMAL
    assert sol.cost <= 1e-10
    assert small_controller.pi_mpc(np.zeros(2)) == pytest.approx(0.0, abs=1e-8)


def test_solution_inside_terminal_set(
    small_controller: RMPCController, small_design: RMPCDesign
) -> None:
    x0 = inside_terminal(small_design, 0.5)
    sol = small_controller.solve(x0)
    assert sol.optimal
    assert np.array_equal(sol.states[0], x0)
    assert sol.horizon == small_design.plant.N
    check_solution(sol, small_design)
    assert sol.cost == pytest.approx(small_controller.cost(sol.states, sol.inputs))
    assert sol.slack <= 1e-6


def test_optimal_cost_below_terminal_controller(
    small_controller: RMPCController, small_design: RMPCDesign
) -> None:
    x0 = inside_terminal(small_design, 0.8, angle=2.0)
    sol = small_controller.solve(x0)
    assert sol.optimal
    ti = small_design.terminal
    xs = [x0]
    us = []
    for _ in range(small_design.plant.N):
        us.append(float(ti.k_f(xs[-1])))
        xs.append(step(small_design.plant, xs[-1], us[-1]))
    reference = small_controller.cost(np.array(xs), np.array(us))
    assert sol.cost <= reference * (1.0 + 1e-8) + 1e-12


def test_outside_X_is_infeasible(small_controller: RMPCController) -> None:
    sol = small_controller.solve(np.array([0.3, 0.0]))
    assert sol.status == INFEASIBLE
    assert sol.iterations == 0
    assert not small_controller.is_feasible(np.array([0.3, 0.0]))
    with pytest.raises(OCPInfeasible):
        small_controller.pi_mpc(np.array([0.0, -0.25]))


def test_non_finite_state_rejected(small_controller: RMPCController) -> None:
    with pytest.raises(ValueError):
        small_controller.solve(np.array([np.nan, 0.0]))


def test_warm_start_reproduces_solution(
    small_controller: RMPCController, small_design: RMPCDesign
) -> None:
    x0 = inside_terminal(small_design, 0.6, angle=-1.0)
    cold = small_controller.solve(x0)
    warm = small_controller.solve(x0, warm=cold)
    assert warm.optimal
    assert warm.cost == pytest.approx(cold.cost, rel=1e-6, abs=1e-12)
    assert warm.iterations <= cold.iterations


def test_shift_warm_start(
    small_controller: RMPCController, small_design: RMPCDesign
) -> None:
    x0 = inside_terminal(small_design, 0.6)
    sol = small_controller.solve(x0)
    shifted = shift_warm_start(sol, small_design)
    assert shifted.horizon == sol.horizon
    assert np.array_equal(shifted.states[0], sol.states[1])
    assert np.array_equal(shifted.inputs[:-1], sol.inputs[1:])
    x1 = step(small_design.plant, x0, sol.inputs[0])
    nxt = small_controller.solve(x1, warm=shifted)
    assert nxt.optimal
    check_solution(nxt, small_design)


def test_solution_arrays_are_read_only(small_controller: RMPCController) -> None:
    sol = small_controller.solve(np.zeros(2))
    with pytest.raises(ValueError):
        sol.inputs[0] = 1.0
    assert set(sol.summary()) >= {"status", "cost", "u0", "iterations"}


def test_controller_settings_validated(small_design: RMPCDesign) -> None:
    with pytest.raises(ValueError):
        RMPCController(small_design, max_iter=0)
    with pytest.raises(ValueError):
        RMPCController(small_design, tol=0.0)


def test_qp_failure_is_reported_as_maxiter(
    small_controller: RMPCController,
    small_design: RMPCDesign,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    def unsolved(self: ActiveSetQP, z0: np.ndarray, **_: object) -> QPResult:
        return QPResult(
            z=np.asarray(z0, dtype=float),
            multipliers=np.zeros(self.m),
            active=(),
            iterations=1,
            status=QP_MAXITER,
        )

    monkeypatch.setattr(ActiveSetQP, "solve", unsolved)
    sol = small_controller.solve(inside_terminal(small_design, 0.5))
    assert sol.status == MAXITER
    assert sol.iterations == 1


def test_iteration_cap_with_slack_is_infeasible(small_design: RMPCDesign) -> None:
    # x1 drifts past its bound in one step whatever the input
    controller = RMPCController(small_design, max_iter=1)
    sol = controller.solve(np.array([0.199, -0.199]))
    assert sol.status == INFEASIBLE
    assert sol.slack > 1e-6


def test_optimal_exits_have_small_kkt_residual(
    small_controller: RMPCController, small_design: RMPCDesign
) -> None:
    for fraction, angle in [(0.3, 0.1), (0.7, 1.9), (0.95, -2.4)]:
        sol = small_controller.solve(inside_terminal(small_design, fraction, angle))
        assert sol.optimal
        assert sol.kkt_residual <= 1e-6


@pytest.mark.slow  # type: ignore[misc]
def test_full_horizon_origin(full_controller: RMPCController) -> None:
    sol = full_controller.solve(np.zeros(2))
    assert sol.status == OPTIMAL
    assert sol.cost <= 1e-10
    assert sol.kkt_residual <= 1e-6


@pytest.mark.slow  # type: ignore[misc]
def test_full_horizon_near_origin_follows_terminal_gain(
    full_controller: RMPCController, full_design: RMPCDesign
) -> None:
    ti = full_design.terminal
    x0 = np.array([1e-4, 1e-4])
    assert ti.contains(x0)
    sol = full_controller.solve(x0)
    assert sol.status == OPTIMAL
    assert sol.kkt_residual <= 1e-6
    check_solution(sol, full_design)
    assert sol.inputs[0] == pytest.approx(ti.k_f(x0), rel=0.05)
    assert sol.cost <= ti.V_f(x0) + 1e-6
    assert full_controller.pi_mpc(x0) == pytest.approx(sol.inputs[0])


@pytest.mark.slow  # type: ignore[misc]
def test_full_horizon_terminal_set_states(
    full_controller: RMPCController, full_design: RMPCDesign
) -> None:
    rng = np.random.default_rng(7)
    for _ in range(50):
        fraction = float(rng.uniform(0.05, 0.95))
        x0 = inside_terminal(full_design, fraction, float(rng.uniform(-np.pi, np.pi)))
        sol = full_controller.solve(x0)
        assert sol.status == OPTIMAL
        assert sol.kkt_residual <= 1e-6
        assert sol.cost <= full_design.terminal.V_f(x0) + 1e-6
        check_solution(sol, full_design)


@pytest.mark.slow  # type: ignore[misc]
def test_full_horizon_infeasible_corner(full_controller: RMPCController) -> None:
    x0 = np.array([0.199, -0.199])
    sol = full_controller.solve(x0)
    assert sol.status == INFEASIBLE
    assert sol.slack > 1e-6
    assert not full_controller.is_feasible(x0)


@pytest.mark.slow  # type: ignore[misc]
def test_full_horizon_corner_verdict_is_reproducible(
    full_controller: RMPCController,
) -> None:
    x0 = np.array([0.19, 0.19])
    first = full_controller.solve(x0)
    second = full_controller.solve(x0)
    assert first.status in (OPTIMAL, INFEASIBLE)
    assert second.status == first.status
    assert np.array_equal(second.inputs, first.inputs)
