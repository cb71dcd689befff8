import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from ampc.core.config import default_config
from ampc.errors import DesignInfeasible
from ampc.mpc.model import PlantConfig, jacobians
from ampc.mpc.riccati import closed_loop_weight, dlqr, riccati_residual, solve_dare


def test_matches_scipy_on_plant_linearization() -> None:
    plant = PlantConfig.from_config(default_config())
    A, B = jacobians(plant, np.zeros(2), 0.0)
    R = np.array([[plant.R]])
    P = solve_dare(A, B, plant.Q, R)
    P_ref = solve_discrete_are(A, B, plant.Q, R)
    assert np.allclose(P, P_ref, rtol=1e-8)
    assert riccati_residual(A, B, plant.Q, R, P) <= 1e-8 * np.max(np.abs(P))
    assert riccati_residual(A, B, plant.Q, R, P) <= 1e-8


def test_gain_stabilizes() -> None:
    plant = PlantConfig.from_config(default_config())
    A, B = jacobians(plant, np.zeros(2), 0.0)
    K, _ = dlqr(A, B, plant.Q, plant.R)
    assert K.shape == (1, 2)
    assert np.max(np.abs(np.linalg.eigvals(A + B @ K))) < 1.0


def test_unstabilizable_pair_raises() -> None:
    A = np.diag([2.0, 0.5])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(DesignInfeasible):
        solve_dare(A, B, np.eye(2), 1.0, max_iter=2000)


def test_closed_loop_weight() -> None:
    plant = PlantConfig.from_config(default_config())
    A, B = jacobians(plant, np.zeros(2), 0.0)
    K, P_lqr = dlqr(A, B, plant.Q, plant.R)
    assert np.allclose(closed_loop_weight(A, B, K, plant.Q, plant.R), P_lqr, rtol=1e-8)
    P = closed_loop_weight(A, B, K, plant.Q, plant.R, margin=1.0)
    assert P == pytest.approx(np.array([[33.21, -3.61], [-3.61, 6.65]]), rel=2e-2)
    assert np.min(np.linalg.eigvalsh(P - P_lqr)) > 0.0


def test_closed_loop_weight_rejects_unstable_gain() -> None:
    with pytest.raises(DesignInfeasible):
        closed_loop_weight(np.eye(2), np.ones(2), np.zeros((1, 2)), np.eye(2), 1.0)
