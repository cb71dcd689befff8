from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

import numpy as np
import typer

from ampc.bench.controllers import AMPCController, ZeroController, lqr_controller
from ampc.bench.simulate import simulate, write_sim_csv
from ampc.cli.common import (
    CONFIG_OPTION,
    OUT_OPTION,
    OVERRIDE_OPTION,
    collect_overrides,
    config_path_arg,
    exit_on_error,
)
from ampc.core.config import format_value
from ampc.core.runner import (
    BENCH_SEED_OFFSET,
    build_controller,
    feasible_states,
    load_stage_inputs,
    output_dir_for,
    prepare_config,
    run_bench,
    run_certify,
    run_design,
    run_sample,
    run_train,
)
from ampc.errors import CertificationFailed
from ampc.learning.sampler import load_dataset
from ampc.mpc.design import design_rmpc, design_summary
from ampc.utils.logger import get_logger
from ampc.utils.paths import get_dataset_dir, get_sim_path
from ampc.validation.certifier import RMPCOracle

logger = get_logger(__name__)

WEIGHTS_OPTION = typer.Option(
    None, "--weights", help="Weights file (defaults to weights.nn in the output dir)."
)
WORKERS_OPTION = typer.Option(None, "--workers", help="Worker processes.")
SIM_CONTROLLERS = ("ampc", "lqr", "rmpc", "zero")


def _echo_values(values: dict[str, Any]) -> None:
    for key, val in values.items():
        typer.echo(f"{key} = {format_value(val)}")


def design_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    eta: Optional[float] = typer.Option(None, "--eta", help="Input disturbance bound."),
) -> None:
    """
    Validate the constants and compute tightening and terminal ingredients.
    """
    overrides = collect_overrides(override, eta=eta)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        design = run_design(config, output_dir_for(config, out))
    _echo_values(design_summary(design))


def sample_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    grid_step: Optional[float] = typer.Option(
        None, "--grid-step", help="Grid spacing over X."
    ),
    workers: Optional[int] = WORKERS_OPTION,
) -> None:
    """
    Solve the robust MPC on a grid over X and write the feasible samples.
    """
    overrides = collect_overrides(override, grid_step=grid_step, workers=workers)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        out_dir = output_dir_for(config, out)
        ds = run_sample(config, out_dir, design_rmpc(config))
    _echo_values(
        {
            "count_total": ds.count_total,
            "count_feasible": ds.count_feasible,
            "count_infeasible": ds.count_infeasible,
        }
    )


def train_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    dataset: Optional[Path] = typer.Option(
        None, "--dataset", help="Shard directory or CSV (defaults to <out>/dataset)."
    ),
) -> None:
    """
    Fit the network to the sampled dataset, keeping the best seed.
    """
    overrides = collect_overrides(override)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        out_dir = output_dir_for(config, out)
        ds = load_dataset(dataset if dataset is not None else get_dataset_dir(out_dir))
        _, report = run_train(config, out_dir, ds, design_rmpc(config))
    _echo_values(report.summary())


def certify_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    weights: Optional[Path] = WEIGHTS_OPTION,
    mu_crit: Optional[float] = typer.Option(None, "--mu-crit"),
    delta_h: Optional[float] = typer.Option(None, "--delta-h"),
    p_max: Optional[int] = typer.Option(None, "--p-max"),
    batch0: Optional[int] = typer.Option(None, "--batch0"),
    base_seed: Optional[int] = typer.Option(None, "--base-seed"),
    t_max: Optional[int] = typer.Option(None, "--t-max"),
    workers: Optional[int] = WORKERS_OPTION,
) -> None:
    """
    Statistically validate the network in closed loop. Exits 4 when the
    verdict is Failed.
    """
    overrides = collect_overrides(
        override,
        mu_crit=mu_crit,
        delta_h=delta_h,
        p_max=p_max,
        batch0=batch0,
        base_seed=base_seed,
        t_max=t_max,
        workers=workers,
    )
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        out_dir = output_dir_for(config, out)
        params = load_stage_inputs(out_dir, weights)
        report = run_certify(config, out_dir, params, design_rmpc(config))
        _echo_values(report.summary())
        if not report.certified:
            raise CertificationFailed(
                f"Verdict {report.verdict} after p={report.p} trajectories"
            )


def simulate_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    weights: Optional[Path] = WEIGHTS_OPTION,
    x1: Optional[float] = typer.Option(None, "--x1", help="Initial x1 (shifted)."),
    x2: Optional[float] = typer.Option(None, "--x2", help="Initial x2 (shifted)."),
    steps: Optional[int] = typer.Option(None, "--steps", help="Simulation length."),
    controller: Optional[list[str]] = typer.Option(
        None,
        "--controller",
        help=f"Controllers to simulate, any of {', '.join(SIM_CONTROLLERS)}.",
    ),
) -> None:
    """
    Closed-loop simulation from one initial state; writes sim_<tag>.csv.
    Without --x1/--x2 the first benchmark initial state is used.
    """
    tags = controller or ["ampc", "lqr", "rmpc"]
    unknown = [t for t in tags if t not in SIM_CONTROLLERS]
    if unknown:
        raise typer.BadParameter(f"Unknown controller(s): {unknown}")
    if (x1 is None) != (x2 is None):
        raise typer.BadParameter("Give both --x1 and --x2 or neither")
    overrides = collect_overrides(override, sim_steps=steps)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        out_dir = output_dir_for(config, out)
        design = design_rmpc(config)
        oracle = RMPCOracle(build_controller(design, config))
        if x1 is None or x2 is None:
            seed0 = int(config.base_seed) + BENCH_SEED_OFFSET
            x0 = feasible_states(1, design, oracle, seed0)[0]
            oracle.reset()
        else:
            x0 = np.array([x1, x2])
        policies: dict[str, Any] = {"lqr": lqr_controller(design), "rmpc": oracle}
        policies["zero"] = ZeroController()
        if "ampc" in tags:
            params = load_stage_inputs(out_dir, weights)
            policies["ampc"] = AMPCController(params, design)
        for tag in tags:
            result = simulate(policies[tag], x0, int(config.sim_steps), design, tag=tag)
            write_sim_csv(result, get_sim_path(out_dir, tag), design)
            _echo_values(result.summary())


def bench_cmd(
    cfg: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
    weights: Optional[Path] = WEIGHTS_OPTION,
    timing: bool = typer.Option(True, "--timing/--no-timing"),
) -> None:
    """
    Compare AMPC, LQR and RMPC in closed loop, time the network, write figures.
    """
    overrides = collect_overrides(override)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        out_dir = output_dir_for(config, out)
        params = load_stage_inputs(out_dir, weights)
        summary = run_bench(config, out_dir, params, design_rmpc(config), timing=timing)
    _echo_values(summary)


def solve_one_cmd(
    x1: float = typer.Option(..., "--x1", help="State x1 (shifted coordinates)."),
    x2: float = typer.Option(..., "--x2", help="State x2 (shifted coordinates)."),
    cfg: Optional[Path] = CONFIG_OPTION,
    override: Optional[list[str]] = OVERRIDE_OPTION,
) -> None:
    """
    Solve the robust MPC once at (x1, x2) and print the solution summary.
    """
    overrides = collect_overrides(override)
    path = config_path_arg(cfg)
    with exit_on_error():
        config = prepare_config(path, overrides)
        design = design_rmpc(config)
        sol = build_controller(design, config).solve(np.array([x1, x2]))
    _echo_values(sol.summary())
