from pathlib import Path
from typing import Any

import numpy as np
import pytest

import ampc.learning.trainer as trainer_mod
from ampc.core.config import read_key_value_file
from ampc.errors import TrainingDiverged
from ampc.learning.network import infer, init_network
from ampc.learning.sampler import Dataset
from ampc.learning.trainer import (
    TrainConfig,
    holdout_mask,
    lm_step,
    retrain_schedule,
    train,
    train_seeds,
    write_train_report,
)

U_BOUNDS = (-0.7853, 1.2147)
TINY = TrainConfig(max_epochs=40, batch_size=4096, layer_dims=(2, 6, 6, 1))


def linear_feedback(states: np.ndarray) -> np.ndarray:
    return np.clip(-2.0 * states[:, 0] - 1.5 * states[:, 1], *U_BOUNDS)


@pytest.fixture  # type: ignore[misc]
def synthetic() -> Dataset:
    axis = np.linspace(-0.2, 0.2, 21)
    g2, g1 = np.meshgrid(axis, axis, indexing="ij")
    states = np.column_stack([g1.ravel(), g2.ravel()])
    records = np.column_stack([states, linear_feedback(states)])
    return Dataset(records=records, grid_step=0.02, count_total=len(records))


def test_train_config_validation() -> None:
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(holdout_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(mu_init=1.0, mu_max=0.5)
    cfg = TrainConfig.from_config({"max_epochs": 5, "holdout_fraction": 0.2})
    assert cfg.max_epochs == 5
    assert cfg.holdout_fraction == 0.2
    assert cfg.batch_size == 4096


def test_holdout_mask_is_deterministic(synthetic: Dataset) -> None:
    mask = holdout_mask(synthetic.states, 0.2)
    assert np.array_equal(mask, holdout_mask(synthetic.states, 0.2))
    assert 0.05 < mask.mean() < 0.4
    assert not holdout_mask(synthetic.states, 0.0).any()
    # membership depends on the coordinates, not the position in the dataset
    perm = np.random.default_rng(0).permutation(len(synthetic))
    assert np.array_equal(holdout_mask(synthetic.states[perm], 0.2), mask[perm])


def test_lm_step_decreases_loss(synthetic: Dataset) -> None:
    params = init_network(0, TINY.layer_dims)
    x = synthetic.states
    target = synthetic.inputs
    before = float(np.mean((np.asarray(infer(params, x)) - target) ** 2))
    new_params, loss, mu, accepted = lm_step(params, x, target, 1e-3, 1e10)
    assert accepted
    assert loss < before
    assert mu < 1e10
    assert not np.array_equal(new_params.to_vector(), params.to_vector())


def test_lm_step_gives_up_past_mu_max(synthetic: Dataset) -> None:
    params = init_network(0, TINY.layer_dims)
    x = synthetic.states[:1]
    # a single zero-error point cannot improve
    target = np.asarray(infer(params, x)).reshape(-1)
    new_params, _, mu, accepted = lm_step(params, x, target, 1e-3, 1.0)
    assert not accepted
    assert mu > 1.0
    assert new_params is params


def test_train_fits_linear_feedback(synthetic: Dataset) -> None:
    params, report = train(synthetic, U_BOUNDS, seed=0, config=TINY)
    assert params.layer_dims == TINY.layer_dims
    assert report.train_size + report.holdout_size == len(synthetic)
    assert report.holdout_size > 0
    assert 1 <= report.epochs_run <= TINY.max_epochs
    assert report.stop_reason in {"max_epochs", "converged", "mu_max", "plateau"}
    assert len(report.loss_history) == report.epochs_run
    assert report.loss_history[-1] <= report.loss_history[0]
    assert report.max_holdout_abs_error < 0.05
    u_pred = np.asarray(infer(params, synthetic.states))
    assert np.max(np.abs(u_pred - synthetic.inputs)) < 0.05
    assert np.isfinite(report.lipschitz_bound)


def test_train_is_deterministic(synthetic: Dataset) -> None:
    config = TrainConfig(max_epochs=5, layer_dims=(2, 4, 1))
    a, report_a = train(synthetic, U_BOUNDS, seed=1, config=config)
    b, report_b = train(synthetic, U_BOUNDS, seed=1, config=config)
    assert np.array_equal(a.to_vector(), b.to_vector())
    assert report_a.loss_history == report_b.loss_history


def test_train_minibatches(synthetic: Dataset) -> None:
    config = TrainConfig(max_epochs=3, batch_size=64, layer_dims=(2, 4, 1))
    _, report = train(synthetic, U_BOUNDS, seed=0, config=config)
    assert report.epochs_run == 3
    assert np.isfinite(report.final_train_mse)


def test_train_without_holdout(synthetic: Dataset) -> None:
    config = TrainConfig(max_epochs=2, holdout_fraction=0.0, layer_dims=(2, 4, 1))
    _, report = train(synthetic, U_BOUNDS, seed=0, config=config)
    assert report.holdout_size == 0
    assert report.train_size == len(synthetic)


def test_train_rejects_empty_dataset() -> None:
    empty = Dataset(records=np.zeros((0, 3)), grid_step=0.1, count_total=0)
    with pytest.raises(ValueError, match="empty"):
        train(empty, U_BOUNDS, config=TINY)


def test_train_seeds_keeps_smallest_holdout_error(synthetic: Dataset) -> None:
    config = TrainConfig(max_epochs=5, layer_dims=(2, 4, 1))
    params, best, reports = train_seeds(synthetic, U_BOUNDS, [0, 1, 2], config)
    assert [r.seed for r in reports] == [0, 1, 2]
    assert best.max_holdout_abs_error == min(r.max_holdout_abs_error for r in reports)
    retrained, _ = train(synthetic, U_BOUNDS, seed=best.seed, config=config)
    assert np.array_equal(params.to_vector(), retrained.to_vector())


def test_train_seeds_skips_diverged_seed(
    synthetic: Dataset, monkeypatch: pytest.MonkeyPatch
) -> None:
    real_train = trainer_mod.train

    def flaky_train(
        ds: Dataset, u_bounds: Any, seed: int = 0, config: Any = None
    ) -> Any:
        if seed == 1:
            raise TrainingDiverged(seed, 3, float("nan"))
        return real_train(ds, u_bounds, seed=seed, config=config)

    monkeypatch.setattr(trainer_mod, "train", flaky_train)
    config = TrainConfig(max_epochs=2, layer_dims=(2, 4, 1))
    _, best, reports = train_seeds(synthetic, U_BOUNDS, [0, 1], config)
    assert [r.seed for r in reports] == [0]
    assert best.seed == 0


def test_train_seeds_all_diverged(
    synthetic: Dataset, monkeypatch: pytest.MonkeyPatch
) -> None:
    def diverging(ds: Dataset, u_bounds: Any, seed: int = 0, config: Any = None) -> Any:
        raise TrainingDiverged(seed, 1, float("inf"))

    monkeypatch.setattr(trainer_mod, "train", diverging)
    with pytest.raises(TrainingDiverged) as exc_info:
        train_seeds(synthetic, U_BOUNDS, [4, 5])
    assert exc_info.value.seed == 5
    assert exc_info.value.exit_code == 3
    with pytest.raises(ValueError):
        train_seeds(synthetic, U_BOUNDS, [])


def test_retrain_schedule() -> None:
    config = TrainConfig(max_epochs=100, batch_size=32)
    seeds, first = retrain_schedule([0, 1], config, 0)
    assert seeds == [0, 1]
    assert first.max_epochs == 100
    seeds, later = retrain_schedule([0, 1], config, 2)
    assert seeds == [2, 3]
    assert later.max_epochs == 400
    assert later.batch_size == 32


def test_write_train_report(synthetic: Dataset, tmp_path: Path) -> None:
    config = TrainConfig(max_epochs=2, layer_dims=(2, 4, 1))
    _, report = train(synthetic, U_BOUNDS, seed=0, config=config)
    path = tmp_path / "train_report.txt"
    write_train_report(report, path)
    values = read_key_value_file(path)
    assert "loss_history" not in values
    assert int(values["seed"]) == 0
    assert int(values["epochs_run"]) == report.epochs_run
    assert float(values["max_holdout_abs_error"]) == report.max_holdout_abs_error
