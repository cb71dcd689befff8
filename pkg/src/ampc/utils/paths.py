import os
from pathlib import Path
from typing import Optional, Union

from ampc.constants import (
    CERT_REPORT_FILENAME,
    CONFIG_FLAT_FILENAME,
    DATASET_DIRNAME,
    DESIGN_FILENAME,
    EVENTS_FILENAME,
    FIGURES_DIRNAME,
    INDICATOR_LOG_FILENAME,
    LOG_FILENAME,
    MANIFEST_FILENAME,
    TIMING_FILENAME,
    TRAIN_REPORT_FILENAME,
    WEIGHTS_FILENAME,
)


def get_ampc_root() -> Path:
    """
    Get the root directory that relative output directories are resolved against.
    This can be set via the `AMPC_ROOT` environment variable,
    and defaults to the current working directory otherwise.

    """
    return Path(os.environ.get("AMPC_ROOT", Path.cwd()))


def resolve_output_dir(output_dir: Optional[Union[str, Path]] = None) -> Path:
    """
    Return the absolute output directory; relative paths hang off the ampc root.
    """
    if output_dir is None:
        return get_ampc_root().joinpath("results")
    path = Path(output_dir)
    if path.is_absolute():
        return path
    return get_ampc_root().joinpath(path)


# Bookkeeping
def get_manifest_path(out_dir: Path) -> Path:
    return out_dir.joinpath(MANIFEST_FILENAME)


def get_events_path(out_dir: Path) -> Path:
    return out_dir.joinpath(EVENTS_FILENAME)


def get_config_flat_path(out_dir: Path) -> Path:
    return out_dir.joinpath(CONFIG_FLAT_FILENAME)


def get_log_path(out_dir: Path) -> Path:
    return out_dir.joinpath(LOG_FILENAME)


# Stage artifacts
def get_design_path(out_dir: Path) -> Path:
    return out_dir.joinpath(DESIGN_FILENAME)


def get_dataset_dir(out_dir: Path) -> Path:
    return out_dir.joinpath(DATASET_DIRNAME)


def get_weights_path(out_dir: Path) -> Path:
    return out_dir.joinpath(WEIGHTS_FILENAME)


def get_train_report_path(out_dir: Path) -> Path:
    return out_dir.joinpath(TRAIN_REPORT_FILENAME)


def get_cert_report_path(out_dir: Path) -> Path:
    return out_dir.joinpath(CERT_REPORT_FILENAME)


def get_indicator_log_path(out_dir: Path) -> Path:
    return out_dir.joinpath(INDICATOR_LOG_FILENAME)


def get_sim_path(out_dir: Path, name: str) -> Path:
    """Return path of a simulation CSV: sim_<name>.csv"""
    return out_dir.joinpath(f"sim_{name}.csv")


def get_timing_path(out_dir: Path) -> Path:
    return out_dir.joinpath(TIMING_FILENAME)


def get_figures_dir(out_dir: Path) -> Path:
    return out_dir.joinpath(FIGURES_DIRNAME)
