import logging
from pathlib import Path
from typing import Generator

import pytest
from ml_collections import ConfigDict

import ampc.utils.logger as logger_mod
from ampc.core.config import default_config, override_config
from ampc.mpc.design import RMPCDesign, design_rmpc
from ampc.mpc.ocp import RMPCController

# Short horizon and coarse grids; the numerics are the same as the default
# config, only cheaper.
SMALL_OVERRIDES = {
    "n_horizon": 15,
    "eta": 1e-3,
    "epsilon_override": None,
    "terminal_grid_count": 16,
    "grid_step": 0.05,
    "seeds": [0],
    "max_epochs": 60,
    "batch_size": 4096,
    "p_max": 20,
    "batch0": 10,
    "t_max": 300,
    "compare_points": 2,
    "timing_points": 3,
    "sim_steps": 300,
    "max_retrain": 0,
    "progress": False,
}


@pytest.fixture(autouse=True)  # type: ignore[misc]
def reset_logger_singleton() -> None:
    """Reset global logger before each test."""
    logger_mod._LOGGER = None
    logging.getLogger("ampc").handlers.clear()


@pytest.fixture(autouse=True)  # type: ignore[misc]
def _isolate_ampc_root(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> Generator[None, None, None]:
    monkeypatch.setenv("AMPC_ROOT", str(tmp_path))
    yield


@pytest.fixture(scope="session")  # type: ignore[misc]
def small_config() -> ConfigDict:
    return override_config(default_config(), SMALL_OVERRIDES)


@pytest.fixture(scope="session")  # type: ignore[misc]
def small_design(small_config: ConfigDict) -> RMPCDesign:
    return design_rmpc(small_config)


@pytest.fixture(scope="session")  # type: ignore[misc]
def small_controller(
    small_design: RMPCDesign, small_config: ConfigDict
) -> RMPCController:
    return RMPCController.from_config(small_design, small_config)


@pytest.fixture  # type: ignore[misc]
def data_dir() -> Path:
    return Path(__file__).parent.joinpath("data")


@pytest.fixture(scope="session")  # type: ignore[misc]
def full_config() -> ConfigDict:
    return override_config(default_config(), {"progress": False})


@pytest.fixture(scope="session")  # type: ignore[misc]
def full_design(full_config: ConfigDict) -> RMPCDesign:
    return design_rmpc(full_config)


@pytest.fixture(scope="session")  # type: ignore[misc]
def full_controller(full_design: RMPCDesign, full_config: ConfigDict) -> RMPCController:
    return RMPCController.from_config(full_design, full_config)
