"""
Levenberg-Marquardt training of the feedback network on a sampled dataset.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ampc.core.config import write_key_value_file
from ampc.errors import TrainingDiverged
from ampc.learning.network import (
    DEFAULT_LAYER_DIMS,
    NetworkParams,
    forward,
    infer,
    init_network,
    lipschitz_bound,
    output_jacobian,
    scaling_from_unit_box,
    scaling_to_unit_box,
)
from ampc.learning.sampler import Dataset
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

MU_DECREASE = 0.1
MU_INCREASE = 10.0
PLATEAU_WINDOW = 10
PLATEAU_TOL = 1e-6
LOSS_FLOOR = 1e-20


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    batch_size: int = 4096
    holdout_fraction: float = 0.1
    mu_init: float = 1e-3
    mu_max: float = 1e10
    layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError(
                f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}"
            )
        if not 0.0 < self.mu_init < self.mu_max:
            raise ValueError("Need 0 < mu_init < mu_max")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> TrainConfig:
        return cls(
            max_epochs=int(cfg.get("max_epochs", 2000)),
            batch_size=int(cfg.get("batch_size", 4096)),
            holdout_fraction=float(cfg.get("holdout_fraction", 0.1)),
            mu_init=float(cfg.get("mu_init", 1e-3)),
            mu_max=float(cfg.get("mu_max", 1e10)),
        )


@dataclass
class TrainReport:
    seed: int
    epochs_run: int
    final_train_mse: float
    final_holdout_mse: float
    max_holdout_abs_error: float
    lipschitz_bound: float = float("nan")
    stop_reason: str = ""
    train_size: int = 0
    holdout_size: int = 0
    loss_history: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("loss_history")
        return out


def holdout_mask(states: NDArray[np.float64], fraction: float) -> NDArray[np.bool_]:
    """
    Deterministic split: a record is held out iff the hash of its coordinates
    falls below `fraction`.
    """
    mask = np.zeros(len(states), dtype=bool)
    if fraction <= 0.0:
        return mask
    for i, row in enumerate(np.ascontiguousarray(states, dtype=np.float64)):
        digest = hashlib.blake2b(row.tobytes(), digest_size=8).digest()
        mask[i] = int.from_bytes(digest, "big") / 2.0**64 < fraction
    return mask


def _loss(
    params: NetworkParams, x: NDArray[np.float64], target: NDArray[np.float64]
) -> float:
    y, _ = forward(params, x)
    return float(np.mean((y - target) ** 2))


def lm_step(
    params: NetworkParams,
    x: NDArray[np.float64],
    target: NDArray[np.float64],
    mu: float,
    mu_max: float,
) -> tuple[NetworkParams, float, float, bool]:
    """
    One Levenberg-Marquardt update on a batch: solve (J'J + mu I) d = -J'r and
    raise mu until the batch loss decreases.

    Returns (params, loss, mu, accepted); accepted is False once mu exceeds mu_max.
    """
    y, J = output_jacobian(params, x)
    r = y - target
    loss = float(np.mean(r**2))
    JtJ = J.T @ J
    Jtr = J.T @ r
    theta = params.to_vector()
    diag = np.diag_indices_from(JtJ)
    while mu <= mu_max:
        damped = JtJ.copy()
        damped[diag] += mu
        try:
            factor = cho_factor(damped, overwrite_a=True)
        except LinAlgError:
            mu *= MU_INCREASE
            continue
        candidate = params.with_vector(theta - cho_solve(factor, Jtr))
        new_loss = _loss(candidate, x, target)
        if np.isfinite(new_loss) and new_loss < loss:
            return candidate, new_loss, max(mu * MU_DECREASE, 1e-20), True
        mu *= MU_INCREASE
    return params, loss, mu, False


def train(
    ds: Dataset,
    u_bounds: tuple[float, float],
    seed: int = 0,
    config: Optional[TrainConfig] = None,
) -> tuple[NetworkParams, TrainReport]:
    """
    Fit the network to (x, u) records by Levenberg-Marquardt on the scaled
    output. Full batch when the training split fits in one batch, otherwise one
    LM step per random batch of `batch_size` records.

    Raises:
        ValueError on an empty dataset.
        TrainingDiverged if the loss becomes non-finite.
    """
    config = config or TrainConfig()
    if len(ds) == 0:
        raise ValueError("Cannot train on an empty dataset")

    states = np.asarray(ds.states)
    inputs = np.asarray(ds.inputs)
    mask = holdout_mask(states, config.holdout_fraction)
    if mask.all():
        mask[:] = False
    x_train, u_train = states[~mask], inputs[~mask]
    if mask.any():
        x_hold, u_hold = states[mask], inputs[mask]
    else:
        logger.warning(
            "Holdout split is empty; holdout metrics use the training records"
        )
        x_hold, u_hold = x_train, u_train

    in_scale = scaling_to_unit_box(states.min(axis=0), states.max(axis=0))
    out_scale = scaling_from_unit_box(*u_bounds)
    params = init_network(
        seed, config.layer_dims, in_scale=in_scale, out_scale=out_scale
    )
    t_train = params.unscale_output(u_train)
    t_hold = params.unscale_output(u_hold)

    rng = np.random.default_rng(seed)
    full_batch = len(x_train) <= config.batch_size
    mu = config.mu_init
    history: list[float] = []
    stop_reason = "max_epochs"
    train_mse = _loss(params, x_train, t_train)
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        if full_batch:
            batches = [np.arange(len(x_train))]
        else:
            order = rng.permutation(len(x_train))
            size = config.batch_size
            batches = [order[i : i + size] for i in range(0, len(order), size)]
        accepted_any = False
        for idx in batches:
            params, _, mu, accepted = lm_step(
                params, x_train[idx], t_train[idx], mu, config.mu_max
            )
            accepted_any |= accepted
            if not accepted:
                mu = config.mu_init if not full_batch else mu
        train_mse = _loss(params, x_train, t_train)
        hold_mse = _loss(params, x_hold, t_hold)
        if not (np.isfinite(train_mse) and np.isfinite(hold_mse)):
            raise TrainingDiverged(seed, epoch, train_mse)
        history.append(hold_mse)
        if epoch % 50 == 0 or epoch == 1:
            logger.debug(
                f"seed {seed} epoch {epoch}: train mse {train_mse:.3e}, "
                f"holdout mse {hold_mse:.3e}, mu {mu:.1e}"
            )

        if train_mse <= LOSS_FLOOR:
            stop_reason = "converged"
            break
        if full_batch and not accepted_any:
            stop_reason = "mu_max"
            break
        if len(history) > PLATEAU_WINDOW:
            ref = history[-PLATEAU_WINDOW - 1]
            best = min(history[-PLATEAU_WINDOW:])
            if ref <= 0.0 or (ref - best) / ref < PLATEAU_TOL:
                stop_reason = "plateau"
                break

    u_pred = np.asarray(infer(params, x_hold)).reshape(-1)
    report = TrainReport(
        seed=seed,
        epochs_run=epoch,
        final_train_mse=train_mse,
        final_holdout_mse=history[-1] if history else _loss(params, x_hold, t_hold),
        max_holdout_abs_error=float(np.max(np.abs(u_pred - u_hold))),
        lipschitz_bound=lipschitz_bound(params),
        stop_reason=stop_reason,
        train_size=len(x_train),
        holdout_size=int(mask.sum()),
        loss_history=history,
    )
    logger.info(
        f"seed {seed}: {epoch} epochs ({stop_reason}), train mse {report.final_train_mse:.3e}, "
        f"holdout max error {report.max_holdout_abs_error:.3e}"
    )
    return params, report


def train_seeds(
    ds: Dataset,
    u_bounds: tuple[float, float],
    seeds: Sequence[int],
    config: Optional[TrainConfig] = None,
) -> tuple[NetworkParams, TrainReport, list[TrainReport]]:
    """
    Train once per seed and keep the network with the smallest holdout max error.

    Raises:
        TrainingDiverged if every seed diverges (the last failure is re-raised).
    """
    if not seeds:
        raise ValueError("At least one seed is required")
    best: Optional[tuple[NetworkParams, TrainReport]] = None
    reports: list[TrainReport] = []
    last_error: Optional[TrainingDiverged] = None
    for seed in seeds:
        try:
            params, report = train(ds, u_bounds, seed=int(seed), config=config)
        except TrainingDiverged as exc:
            logger.warning(str(exc))
            last_error = exc
            continue
        reports.append(report)
        if best is None or report.max_holdout_abs_error < best[1].max_holdout_abs_error:
            best = (params, report)
    if best is None:
        assert last_error is not None
        raise last_error
    logger.info(
        f"Selected seed {best[1].seed} (holdout max error {best[1].max_holdout_abs_error:.3e})"
    )
    return best[0], best[1], reports


def retrain_schedule(
    seeds: Sequence[int], config: TrainConfig, round_: int
) -> tuple[list[int], TrainConfig]:
    """Seeds shifted by `round_` and epochs doubled per round."""
    new_seeds = [int(s) + round_ for s in seeds]
    new_config = TrainConfig(
        max_epochs=config.max_epochs * 2**round_,
        batch_size=config.batch_size,
        holdout_fraction=config.holdout_fraction,
        mu_init=config.mu_init,
        mu_max=config.mu_max,
        layer_dims=config.layer_dims,
    )
    return new_seeds, new_config


def write_train_report(report: TrainReport, path: Union[str, Path]) -> None:
    write_key_value_file(report.summary(), path, header="training report")
    logger.info(f"Wrote training report to {path}")
