from collections.abc import Mapping
from pathlib import Path
from typing import Any, Optional, Union, cast

import yaml
from ml_collections import ConfigDict

from ampc.errors import ArtifactFormatError

# Reactor and design constants; missing keys fall back to these.
PLANT_DEFAULTS: dict[str, Any] = {
    "theta": 20.0,
    "k_rate": 300.0,
    "M": 5.0,
    "x_f": 0.3947,
    "x_c": 0.3816,
    "alpha": 0.117,
    "h": 0.1,
    "x_e1": 0.2632,
    "x_e2": 0.6519,
    "u_e": 0.7853,
    "q11": 1.0,
    "q22": 1.0,
    "r": 1e-4,
    "n_horizon": 180,
    "c_delta_l": 12.33,
    "c_delta_u": 199.03,
    "k_max": 45.72,
    "rho": 0.9913,
    "delta_loc": 0.01,
    "lambda": 5.5e-3,
    "eta": 5.1e-3,
    "epsilon_override": 2.2e-3,
}

PIPELINE_DEFAULTS: dict[str, Any] = {
    # design
    "terminal_cost_slack": 1.0,
    "terminal_grid_count": 64,
    "alpha_min": 1e-9,
    "max_eta_halvings": 8,
    # ocp
    "sqp_max_iter": 200,
    "sqp_tol": 1e-8,
    "elastic_penalty": 1e6,
    "merit_penalty": 1.0,
    # sampler
    "grid_step": 5e-3,
    "workers": 1,
    # learner
    "seeds": [0, 1, 2, 3, 4],
    "max_epochs": 2000,
    "batch_size": 4096,
    "holdout_fraction": 0.1,
    "mu_init": 1e-3,
    "mu_max": 1e10,
    "max_retrain": 3,
    # certifier
    "mu_crit": 0.9,
    "delta_h": 0.05,
    "p_max": 5000,
    "batch0": 200,
    "base_seed": 0,
    "t_max": 2000,
    # bench
    "timing_points": 100,
    "compare_points": 20,
    "sim_steps": 2000,
    # io
    "output_dir": "results",
    "progress": True,
}

DEFAULT_CONFIG: dict[str, Any] = {**PLANT_DEFAULTS, **PIPELINE_DEFAULTS}

_NONE_WORDS = {"none", "null", ""}


def default_config() -> ConfigDict:
    return ConfigDict(_copy_values(DEFAULT_CONFIG))


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ConfigDict:
    """
    Load a config file (YAML or flat `key = value` text) over the defaults.

    YAML files may group keys into sections; only the leaf names matter.
    """
    values = _copy_values(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        if path.suffix.lower() in (".yaml", ".yml"):
            loaded = load_config_from_yaml(path)
            flat = {
                k.split(".")[-1]: v for k, v in flatten_config(loaded).items()
            }
        else:
            flat = read_key_value_file(path)
        values.update(flat)
    if overrides:
        values.update(overrides)
    return ConfigDict(values)


def load_config_from_yaml(path: Union[str, Path]) -> ConfigDict:
    """
    Load a config from a YAML file and convert to ConfigDict.
    """
    path = Path(path)
    with path.open("r") as f:
        raw = yaml.safe_load(f)
    return ConfigDict(raw or {})


def save_config_flat(config: ConfigDict, path: Union[str, Path]) -> None:
    """
    Dump the resolved config as flat YAML (for diffing runs).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        yaml.safe_dump(flatten_config(config), f)


def flatten_config(
    config: ConfigDict, parent_key: str = "", sep: str = "."
) -> dict[str, Any]:
    """
    Flatten a nested ConfigDict into a flat dict with dot-separated keys.

    Example:
        ConfigDict({'a': ConfigDict({'b': 1})})
        => {'a.b': 1}
    """
    items: dict[str, Any] = {}
    for k, v in config.items():
        new_key = f"{parent_key}{sep}{k}" if parent_key else k
        if isinstance(v, ConfigDict):
            items.update(flatten_config(v, new_key, sep=sep))
        elif isinstance(v, tuple):
            items[new_key] = list(v)
        else:
            items[new_key] = v
    return items


def override_config(config: ConfigDict, overrides: dict[str, Any]) -> ConfigDict:
    """
    Apply flat overrides to a config (not in-place).
    """
    updated = to_dict(config)
    updated.update(overrides)
    return ConfigDict(updated)


def to_dict(config: ConfigDict) -> dict[str, Any]:
    """
    Convert ConfigDict to a regular Python dict.
    """
    return cast(dict[str, Any], config.to_dict())


def coerce_value(val: str) -> Any:
    """
    Parse a scalar from text: int, float, bool, None, or a comma-separated list.
    """
    text = val.strip()
    if text.lower() in _NONE_WORDS:
        return None
    if "," in text:
        return [coerce_value(part) for part in text.split(",") if part.strip()]
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        return float(text)
    except ValueError:
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        return text


def parse_overrides(items: Optional[list[str]]) -> dict[str, Any]:
    """
    Turn CLI `key=value` strings into a dict of coerced values.
    """
    if not items:
        return {}
    out: dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"Override '{item}' must have the form key=value")
        key, val = item.split("=", 1)
        out[key.strip()] = coerce_value(val)
    return out


def read_key_value_file(path: Union[str, Path]) -> dict[str, Any]:
    """
    Read flat `key = value` text (`#` comments, blank lines ignored).

    Raises:
        ArtifactFormatError naming the line for rows without `=` or duplicate keys.
    """
    path = Path(path)
    out: dict[str, Any] = {}
    with path.open("r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ArtifactFormatError(path, lineno, "expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ArtifactFormatError(path, lineno, "empty key")
            if key in out:
                raise ArtifactFormatError(path, lineno, f"duplicate key '{key}'")
            out[key] = coerce_value(val)
    return out


def write_key_value_file(
    values: Mapping[str, Any], path: Union[str, Path], header: Optional[str] = None
) -> None:
    """
    Write flat `key = value` text; floats keep 17 significant digits.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {header}"] if header else []
    for key, val in values.items():
        lines.append(f"{key} = {format_value(val)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_value(val: Any) -> str:
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return f"{val:.17g}"
    if isinstance(val, (list, tuple)):
        return ",".join(format_value(v) for v in val)
    return str(val)


def _copy_values(values: Mapping[str, Any]) -> dict[str, Any]:
    return {k: list(v) if isinstance(v, list) else v for k, v in values.items()}
