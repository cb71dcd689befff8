import numpy as np
import pytest

from ampc.core.config import default_config
from ampc.errors import DesignInfeasible
from ampc.mpc.model import (
    PlantConfig,
    StabilizabilityConstants,
    default_polytopes,
    estimate_lipschitz,
    from_original,
    jacobians,
    step,
    to_original,
)


@pytest.fixture  # type: ignore[misc]
def plant() -> PlantConfig:
    return PlantConfig.from_config(default_config())


def test_origin_is_exact_fixed_point(plant: PlantConfig) -> None:
    assert np.array_equal(step(plant, np.zeros(2), 0.0), np.zeros(2))


def test_steady_state_residual_small(plant: PlantConfig) -> None:
    assert plant.steady_residual() <= 1e-3


def test_step_is_vectorized(plant: PlantConfig) -> None:
    rng = np.random.default_rng(3)
    xs = rng.uniform(-0.2, 0.2, size=(7, 2))
    us = rng.uniform(-0.7, 1.2, size=7)
    batch = step(plant, xs, us)
    for x, u, row in zip(xs, us, batch):
        assert np.allclose(step(plant, x, u), row, rtol=1e-12, atol=1e-15)


def test_jacobians_match_finite_differences(plant: PlantConfig) -> None:
    x = np.array([0.05, -0.1])
    u = 0.3
    A, B = jacobians(plant, x, u)
    h = 1e-6
    A_fd = np.column_stack(
        [
            (step(plant, x + h * e, u) - step(plant, x - h * e, u)) / (2 * h)
            for e in np.eye(2)
        ]
    )
    B_fd = (step(plant, x, u + h) - step(plant, x, u - h)) / (2 * h)
    assert np.allclose(A, A_fd, atol=1e-7)
    assert np.allclose(B[:, 0], B_fd, atol=1e-9)


def test_step_rejects_non_finite(plant: PlantConfig) -> None:
    with pytest.raises(ValueError):
        step(plant, np.array([np.nan, 0.0]), 0.0)
    with pytest.raises(ValueError):
        step(plant, np.zeros(2), np.inf)


def test_lipschitz_estimate_matches_configured(plant: PlantConfig) -> None:
    X, _, _ = default_polytopes(plant, 5.1e-3)
    lam = estimate_lipschitz(plant, X, 1e-2)
    assert lam == pytest.approx(5.5e-3, rel=1e-2)


def test_default_polytopes(plant: PlantConfig) -> None:
    X, U, U_t = default_polytopes(plant, 0.01)
    lo, hi = X.box_bounds()
    assert np.allclose(lo, [-0.2, -0.2]) and np.allclose(hi, [0.2, 0.2])
    u_lo, u_hi = U.box_bounds()
    assert u_lo[0] == pytest.approx(-plant.u_e)
    assert u_hi[0] == pytest.approx(2.0 - plant.u_e)
    t_lo, t_hi = U_t.box_bounds()
    assert t_lo[0] == pytest.approx(u_lo[0] + 0.01)
    assert t_hi[0] == pytest.approx(u_hi[0] - 0.01)


def test_default_polytopes_reject_large_eta(plant: PlantConfig) -> None:
    with pytest.raises(DesignInfeasible):
        default_polytopes(plant, 1.0)


def test_original_coordinates_round_trip(plant: PlantConfig) -> None:
    x = np.array([0.1, -0.05])
    xo, uo = to_original(plant, x, 0.2)
    assert np.allclose(xo, plant.x_e + x)
    xs, us = from_original(plant, xo, uo)
    assert np.allclose(xs, x) and us == pytest.approx(0.2)


@pytest.mark.parametrize(  # type: ignore[misc]
    "key,value", [("r", 0.0), ("q11", -1.0), ("n_horizon", 0), ("h", 0.0)]
)
def test_plant_validation(key: str, value: float) -> None:
    cfg = default_config()
    cfg[key] = value
    with pytest.raises(ValueError):
        PlantConfig.from_config(cfg)


def test_disturbance_bound() -> None:
    consts = StabilizabilityConstants.from_config(default_config())
    assert consts.eta_max() == pytest.approx(np.sqrt(0.01 / 199.03) / 5.5e-3)
    consts.check_disturbance_bound()
    with pytest.raises(DesignInfeasible):
        consts.with_eta(2.0).check_disturbance_bound()


def test_constants_validation() -> None:
    with pytest.raises(ValueError):
        StabilizabilityConstants(rho=1.0)
    with pytest.raises(ValueError):
        StabilizabilityConstants(c_delta_l=300.0)
