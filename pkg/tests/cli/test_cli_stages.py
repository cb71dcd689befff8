import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from ampc.cli.main import app
from ampc.core.config import read_key_value_file
from ampc.learning.sampler import Dataset, save_dataset
from ampc.utils.paths import get_manifest_path

runner = CliRunner()


def _values(stdout: str) -> dict[str, str]:
    out = {}
    for line in stdout.splitlines():
        if " = " in line:
            key, _, val = line.partition(" = ")
            out[key.strip()] = val.strip()
    return out


def test_design_command(data_dir: Path, tmp_path: Path) -> None:
    out = tmp_path / "run"
    res = runner.invoke(
        app, ["design", "-c", str(data_dir / "base.yaml"), "--out", str(out)]
    )
    assert res.exit_code == 0, res.output
    values = _values(res.stdout)
    assert float(values["alpha_f"]) > 0.0
    assert 0.0 < float(values["eta"]) <= 1e-3
    report = read_key_value_file(out / "design.txt")
    assert report["alpha_f"] == pytest.approx(float(values["alpha_f"]))


def test_design_rejects_large_eta(data_dir: Path, tmp_path: Path) -> None:
    res = runner.invoke(
        app,
        ["design", "-c", str(data_dir / "base.yaml"), "--eta", "2.0"],
    )
    assert res.exit_code == 2
    assert not (tmp_path / "results" / "design.txt").exists()


def test_invalid_value_exits_one(data_dir: Path) -> None:
    res = runner.invoke(
        app, ["design", "-c", str(data_dir / "base.yaml"), "-o", "n_horizon=0"]
    )
    assert res.exit_code == 1


def test_malformed_override_is_usage_error(data_dir: Path) -> None:
    res = runner.invoke(app, ["design", "-c", str(data_dir / "base.yaml"), "-o", "eta"])
    assert res.exit_code != 0
    assert "key=value" in res.output


def test_missing_config_is_usage_error(tmp_path: Path) -> None:
    res = runner.invoke(app, ["design", "-c", str(tmp_path / "nope.yaml")])
    assert res.exit_code == 2


def test_solve_one_at_origin(data_dir: Path) -> None:
    res = runner.invoke(
        app,
        ["solve-one", "--x1", "0", "--x2", "0", "-c", str(data_dir / "base.yaml")],
    )
    assert res.exit_code == 0, res.output
    values = _values(res.stdout)
    assert values["status"] == "Optimal"
    assert abs(float(values["u0"])) < 1e-3


def test_certify_without_weights_is_io_error(data_dir: Path, tmp_path: Path) -> None:
    res = runner.invoke(
        app,
        ["certify", "-c", str(data_dir / "base.yaml"), "--out", str(tmp_path / "run")],
    )
    assert res.exit_code == 5


def test_train_with_malformed_dataset(data_dir: Path, tmp_path: Path) -> None:
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,u\n0.1,0.2\n")
    res = runner.invoke(
        app,
        ["train", "-c", str(data_dir / "base.yaml"), "--dataset", str(bad)],
    )
    assert res.exit_code == 5


def test_simulate_baselines(data_dir: Path, tmp_path: Path) -> None:
    out = tmp_path / "run"
    res = runner.invoke(
        app,
        [
            "simulate",
            "-c",
            str(data_dir / "base.yaml"),
            "--out",
            str(out),
            "--x1",
            "0.01",
            "--x2",
            "-0.01",
            "--steps",
            "20",
            "--controller",
            "lqr",
            "--controller",
            "zero",
        ],
    )
    assert res.exit_code == 0, res.output
    for tag in ("lqr", "zero"):
        lines = (out / f"sim_{tag}.csv").read_text().splitlines()
        assert len(lines) >= 2
    assert not (out / "sim_ampc.csv").exists()


@pytest.mark.parametrize(  # type: ignore[misc]
    "args",
    [
        ["--controller", "mpc"],
        ["--x1", "0.1"],
    ],
)
def test_simulate_bad_arguments(data_dir: Path, args: list[str]) -> None:
    res = runner.invoke(app, ["simulate", "-c", str(data_dir / "base.yaml"), *args])
    assert res.exit_code != 0


def test_pipeline_validate_failure(data_dir: Path, tmp_path: Path) -> None:
    out = tmp_path / "run"
    res = runner.invoke(
        app,
        [
            "pipeline",
            "-c",
            str(data_dir / "base.yaml"),
            "--out",
            str(out),
            "-o",
            "eta=2.0",
        ],
    )
    assert res.exit_code == 2
    assert "Run ID:" in res.stdout
    manifest = json.loads(get_manifest_path(out).read_text())
    assert manifest["stages"]["validate"]["status"] == "FAILED"


@pytest.mark.slow  # type: ignore[misc]
def test_train_command(data_dir: Path, tmp_path: Path) -> None:
    out = tmp_path / "run"
    grid = np.linspace(-0.2, 0.2, 9)
    x1, x2 = np.meshgrid(grid, grid, indexing="ij")
    states = np.column_stack([x1.ravel(), x2.ravel()])
    u = np.clip(-0.5 * states[:, 0] - 0.2 * states[:, 1], -0.7853, 1.2147)
    ds = Dataset(records=np.column_stack([states, u]), grid_step=0.05, count_total=81)
    save_dataset(ds, out / "dataset")

    res = runner.invoke(
        app,
        [
            "train",
            "-c",
            str(data_dir / "base.yaml"),
            "--out",
            str(out),
            "-o",
            "max_epochs=3",
        ],
    )
    assert res.exit_code == 0, res.output
    assert (out / "weights.nn").exists()
    assert (out / "train_report.txt").exists()
    assert int(_values(res.stdout)["epochs_run"]) <= 3
