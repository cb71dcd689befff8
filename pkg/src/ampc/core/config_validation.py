from collections.abc import Sequence
from typing import Any

from ml_collections import ConfigDict

from ampc.core.config import DEFAULT_CONFIG
from ampc.mpc.model import PlantConfig, StabilizabilityConstants
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

KNOWN_KEYS = set(DEFAULT_CONFIG)

POSITIVE_INT_KEYS = [
    "n_horizon",
    "terminal_grid_count",
    "sqp_max_iter",
    "max_epochs",
    "batch_size",
    "p_max",
    "batch0",
    "t_max",
    "timing_points",
    "compare_points",
    "sim_steps",
    "workers",
]
NONNEGATIVE_INT_KEYS = ["max_eta_halvings", "max_retrain", "base_seed"]
POSITIVE_FLOAT_KEYS = [
    "alpha_min",
    "sqp_tol",
    "elastic_penalty",
    "merit_penalty",
    "grid_step",
    "mu_init",
    "mu_max",
]
UNIT_INTERVAL_KEYS = ["mu_crit", "delta_h"]


def warn_unknown_keys(cfg: ConfigDict) -> None:
    for key in cfg:
        if key not in KNOWN_KEYS:
            logger.warning(f"Unknown config key: '{key}'")


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def normalize_seeds(cfg: ConfigDict) -> ConfigDict:
    """
    A single integer seed becomes a one-element list (not in-place).
    """
    seeds = cfg.get("seeds")
    if _is_int(seeds):
        # ConfigDict refuses to retype a field in place
        values = cfg.to_dict()
        values["seeds"] = [seeds]
        cfg = ConfigDict(values)
    return cfg


def check_value_types(cfg: ConfigDict) -> None:
    """
    Raises:
        ValueError for non-numeric, non-positive or out-of-range values.
    """
    for key in POSITIVE_INT_KEYS:
        val = cfg.get(key)
        if not _is_int(val) or val < 1:
            raise ValueError(f"'{key}' must be a positive integer, got {val!r}")
    for key in NONNEGATIVE_INT_KEYS:
        val = cfg.get(key)
        if not _is_int(val) or val < 0:
            raise ValueError(f"'{key}' must be a non-negative integer, got {val!r}")
    for key in POSITIVE_FLOAT_KEYS:
        val = cfg.get(key)
        if not _is_number(val) or not val > 0:
            raise ValueError(f"'{key}' must be a positive number, got {val!r}")
    for key in UNIT_INTERVAL_KEYS:
        val = cfg.get(key)
        if not _is_number(val) or not 0.0 < val < 1.0:
            raise ValueError(f"'{key}' must lie in (0, 1), got {val!r}")

    slack = cfg.get("terminal_cost_slack")
    if not _is_number(slack) or slack < 0:
        raise ValueError(f"'terminal_cost_slack' must be non-negative, got {slack!r}")
    hold = cfg.get("holdout_fraction")
    if not _is_number(hold) or not 0.0 <= hold < 1.0:
        raise ValueError(f"'holdout_fraction' must lie in [0, 1), got {hold!r}")
    if cfg.get("mu_init") >= cfg.get("mu_max"):
        raise ValueError("'mu_init' must be smaller than 'mu_max'")
    override = cfg.get("epsilon_override")
    if override is not None and (not _is_number(override) or override <= 0):
        raise ValueError(
            f"'epsilon_override' must be positive or none, got {override!r}"
        )

    seeds = cfg.get("seeds")
    if (
        not isinstance(seeds, Sequence)
        or isinstance(seeds, str)
        or not seeds
        or not all(_is_int(s) for s in seeds)
    ):
        raise ValueError(f"'seeds' must be a non-empty list of integers, got {seeds!r}")


def check_plant(cfg: ConfigDict) -> None:
    """
    Plant parameters, weights and stabilizability constants.

    Raises:
        ValueError for invalid constants.
        DesignInfeasible if eta exceeds the admissible disturbance bound.
    """
    PlantConfig.from_config(cfg).validate()
    consts = StabilizabilityConstants.from_config(cfg)
    consts.validate()
    consts.check_disturbance_bound()


def validate_config(cfg: ConfigDict) -> ConfigDict:
    """
    Master validation entry point, called before any stage runs. Returns the
    config with seeds normalized.

    Raises:
        ValueError if the config is invalid.
        DesignInfeasible if the disturbance bound is violated.
    """
    warn_unknown_keys(cfg)
    cfg = normalize_seeds(cfg)
    check_value_types(cfg)
    check_plant(cfg)
    return cfg
