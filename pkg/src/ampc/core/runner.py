"""
Stage functions and the end-to-end pipeline.

Each stage reads what it needs from the output directory (or takes it as an
argument) and writes its artifacts there under fixed names, so the CLI can run
stages one at a time or all at once through `run_pipeline`. The design is
deterministic given the config and is recomputed by any stage that needs it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from ml_collections import ConfigDict
from numpy.typing import NDArray

from ampc.bench.controllers import AMPCController, lqr_controller
from ampc.bench.plots import emit_figures, surface_data
from ampc.bench.simulate import (
    closed_loop_contract,
    find_cost_gap,
    simulate,
    write_sim_csv,
)
from ampc.bench.timing import TimingResult, timing_comparison, write_timing
from ampc.constants import EXIT_IO, EXIT_OK
from ampc.core.config import load_config, save_config_flat
from ampc.core.config_validation import validate_config
from ampc.core.manifest import RunManifest, init_run_manifest
from ampc.core.registry import RegistryManager
from ampc.core.stamp import create_run_id
from ampc.core.status import COMPLETED, FAILED, RUNNING, SKIPPED, run_status
from ampc.errors import AMPCError, CertificationFailed
from ampc.learning.network import NetworkParams, infer, load_weights, save_weights
from ampc.learning.sampler import Dataset, build_dataset, load_dataset
from ampc.learning.trainer import (
    TrainConfig,
    TrainReport,
    retrain_schedule,
    train_seeds,
    write_train_report,
)
from ampc.mpc.design import RMPCDesign, design_rmpc, design_summary, write_design_report
from ampc.mpc.ocp import RMPCController
from ampc.utils.logger import (
    add_file_handler,
    bind_run_id,
    get_logger,
    remove_handler,
)
from ampc.utils.paths import (
    get_cert_report_path,
    get_config_flat_path,
    get_dataset_dir,
    get_design_path,
    get_events_path,
    get_figures_dir,
    get_indicator_log_path,
    get_log_path,
    get_manifest_path,
    get_sim_path,
    get_timing_path,
    get_train_report_path,
    get_weights_path,
    resolve_output_dir,
)
from ampc.validation.certifier import (
    CertReport,
    NetworkPolicy,
    RMPCOracle,
    certify,
    sample_initial_condition,
    write_cert_report,
    write_indicator_log,
)

logger = get_logger(__name__)

# Initial-condition seeds for benchmarking start here, away from validation seeds.
BENCH_SEED_OFFSET = 1_000_000
STUDY_Q = np.eye(2)
STUDY_R = 5.0
COMPARE_STOP_RADIUS = 1e-4


def _progress(cfg: ConfigDict) -> bool:
    return bool(cfg.get("progress", True))


def prepare_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ConfigDict:
    """Load, override and validate; the returned config has normalized seeds."""
    cfg = load_config(config_path, overrides)
    return validate_config(cfg)


def output_dir_for(cfg: ConfigDict, out: Optional[Union[str, Path]] = None) -> Path:
    out_dir = resolve_output_dir(out if out is not None else cfg.get("output_dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def build_controller(design: RMPCDesign, cfg: ConfigDict) -> RMPCController:
    return RMPCController.from_config(design, cfg)


def run_design(cfg: ConfigDict, out_dir: Path) -> RMPCDesign:
    design = design_rmpc(cfg)
    write_design_report(design, get_design_path(out_dir))
    return design


def run_sample(cfg: ConfigDict, out_dir: Path, design: RMPCDesign) -> Dataset:
    settings = {
        k: cfg[k]
        for k in ("sqp_max_iter", "sqp_tol", "elastic_penalty", "merit_penalty")
    }
    ds = build_dataset(
        design,
        grid_step=float(cfg.grid_step),
        settings=settings,
        workers=int(cfg.workers),
        out_dir=get_dataset_dir(out_dir),
        progress=_progress(cfg),
    )
    if ds.count_feasible == 0:
        raise AMPCError("No feasible grid point; the dataset is empty")
    return ds


def u_bounds(design: RMPCDesign) -> tuple[float, float]:
    """Output range of the network: the tightened input set the labels lie in."""
    lo, hi = design.U_t.box_bounds()
    return float(lo[0]), float(hi[0])


def run_train(
    cfg: ConfigDict,
    out_dir: Path,
    ds: Dataset,
    design: RMPCDesign,
    round_: int = 0,
) -> tuple[NetworkParams, TrainReport]:
    """Train over all seeds (shifted and longer on retraining rounds)."""
    seeds, config = retrain_schedule(
        list(cfg.seeds), TrainConfig.from_config(cfg), round_
    )
    params, report, _ = train_seeds(ds, u_bounds(design), seeds, config)
    save_weights(params, get_weights_path(out_dir))
    write_train_report(report, get_train_report_path(out_dir))
    return params, report


def run_certify(
    cfg: ConfigDict,
    out_dir: Path,
    params: NetworkParams,
    design: RMPCDesign,
    round_: int = 0,
) -> CertReport:
    """
    Validate the network against the robust MPC. Every retraining round draws
    a fresh block of initial conditions.
    """
    oracle = RMPCOracle(build_controller(design, cfg))
    report = certify(
        NetworkPolicy(params),
        oracle,
        design,
        mu_crit=float(cfg.mu_crit),
        delta_h=float(cfg.delta_h),
        p_max=int(cfg.p_max),
        batch0=int(cfg.batch0),
        base_seed=int(cfg.base_seed) + round_ * int(cfg.p_max),
        t_max=int(cfg.t_max),
        workers=int(cfg.workers),
        progress=_progress(cfg),
    )
    write_cert_report(report, get_cert_report_path(out_dir))
    write_indicator_log(report, get_indicator_log_path(out_dir))
    return report


def feasible_states(
    count: int, design: RMPCDesign, oracle: RMPCOracle, seed0: int
) -> list[NDArray[np.float64]]:
    return [sample_initial_condition(seed0 + i, design, oracle) for i in range(count)]


def run_timing(
    cfg: ConfigDict,
    out_dir: Path,
    params: NetworkParams,
    design: RMPCDesign,
    states: Optional[list[NDArray[np.float64]]] = None,
) -> TimingResult:
    controller = build_controller(design, cfg)
    if states is None:
        oracle = RMPCOracle(controller)
        seed0 = int(cfg.base_seed) + BENCH_SEED_OFFSET
        states = feasible_states(int(cfg.timing_points), design, oracle, seed0)
    result = timing_comparison(
        lambda x: controller.solve(x), lambda x: infer(params, x), states
    )
    write_timing(result, get_timing_path(out_dir))
    return result


def run_bench(
    cfg: ConfigDict,
    out_dir: Path,
    params: NetworkParams,
    design: RMPCDesign,
    ds: Optional[Dataset] = None,
    timing: bool = True,
) -> dict[str, Any]:
    """
    Compare AMPC, saturated LQR and RMPC in closed loop, time the network
    against the optimizer and emit report data. Returns the summary numbers.
    """
    oracle = RMPCOracle(build_controller(design, cfg))
    seed0 = int(cfg.base_seed) + BENCH_SEED_OFFSET
    pool = feasible_states(int(cfg.compare_points), design, oracle, seed0)
    T = int(cfg.sim_steps)

    ampc = AMPCController(params, design)
    lqr = lqr_controller(design)
    summary: dict[str, Any] = {}

    contract = closed_loop_contract(ampc, pool, design, T)
    summary.update({f"ampc_{k}": v for k, v in contract.items()})
    contract = closed_loop_contract(oracle, pool, design, T)
    summary.update({f"rmpc_{k}": v for k, v in contract.items()})
    if contract["passed"] < contract["runs"]:
        logger.warning(
            f"RMPC closed loop failed from {contract['runs'] - contract['passed']} "
            f"of {contract['runs']} feasible states"
        )

    x_gap, pairs = find_cost_gap(
        ampc, lqr, pool, design, T=T, stop_radius=COMPARE_STOP_RADIUS
    )
    summary["cost_gap_found"] = x_gap is not None
    x0 = x_gap if x_gap is not None else pool[0]
    if pairs:
        ratios = [b.cost / a.cost for a, b in pairs if a.cost > 0.0]
        summary["max_cost_ratio"] = max(ratios, default=float("nan"))

    oracle.reset()
    results = [
        simulate(ampc, x0, T, design, stop_radius=COMPARE_STOP_RADIUS),
        simulate(lqr, x0, T, design, stop_radius=COMPARE_STOP_RADIUS),
        simulate(oracle, x0, T, design, tag="rmpc"),
    ]
    for r in results:
        write_sim_csv(r, get_sim_path(out_dir, r.tag), design)
        summary[f"{r.tag}_cost"] = r.cost
        summary[f"{r.tag}_violations"] = r.constraint_violations
    summary["rmpc_final_norm"] = results[2].final_norm

    study = lqr_controller(design, Q=STUDY_Q, R=STUDY_R, tag="lqr_study")
    study_runs = [
        simulate(study, x, T, design, stop_radius=COMPARE_STOP_RADIUS) for x in pool
    ]
    summary["lqr_study_stabilized"] = sum(
        r.final_norm <= COMPARE_STOP_RADIUS for r in study_runs
    )
    summary["lqr_study_runs"] = len(study_runs)

    if ds is None and get_dataset_dir(out_dir).exists():
        ds = load_dataset(get_dataset_dir(out_dir))
    surface = surface_data(params, ds.states) if ds is not None and len(ds) else None
    emit_figures(get_figures_dir(out_dir), results, surface)

    if timing:
        timing_result = run_timing(cfg, out_dir, params, design)
        summary.update({f"timing_{k}": v for k, v in timing_result.summary().items()})
    if ampc.clamped:
        logger.warning(f"AMPC output was clamped to U {ampc.clamped} time(s)")
    logger.info(f"Bench summary: {summary}")
    return summary


def load_stage_inputs(
    out_dir: Path, weights: Optional[Union[str, Path]] = None
) -> NetworkParams:
    path = Path(weights) if weights is not None else get_weights_path(out_dir)
    return load_weights(path)


@dataclass
class PipelineResult:
    run_id: str
    exit_code: int
    out_dir: Path
    failed_stage: Optional[str] = None
    retrain_rounds: int = 0
    summaries: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


class PipelineRunner:
    """
    Runs validate, design, sample, train, certify (with retraining) and bench
    while keeping the run manifest and the event registry current.
    """

    def __init__(
        self,
        cfg: ConfigDict,
        out_dir: Path,
        config_path: Optional[Path] = None,
        bench: bool = True,
    ) -> None:
        self.cfg = cfg
        self.out_dir = out_dir
        self.bench = bench
        self.run_id = create_run_id()
        self.manifest_path = get_manifest_path(out_dir)
        self.registry = RegistryManager(events_path=get_events_path(out_dir))
        self.manifest: RunManifest = init_run_manifest(
            self.manifest_path, self.run_id, out_dir, config_path
        )
        self.registry.run_created(self.run_id, out_dir)

    def _set(self, stage: str, status: str) -> None:
        self.manifest.save(self.manifest_path)
        self.registry.stage_status(self.run_id, stage, status)

    def _start(self, stage: str) -> None:
        logger.info(f"[{self.run_id}] stage {stage}")
        self.manifest.start_stage(stage)
        self._set(stage, RUNNING)

    def _finish(
        self,
        stage: str,
        artifacts: Optional[dict[str, Path]] = None,
        summary: Optional[dict[str, Any]] = None,
    ) -> None:
        arts = {k: str(v) for k, v in (artifacts or {}).items()}
        self.manifest.finish_stage(stage, arts, summary)
        self._set(stage, COMPLETED)

    def _fail(self, stage: str, exc: BaseException) -> None:
        self.manifest.fail_stage(stage, f"{type(exc).__name__}: {exc}")
        self._set(stage, FAILED)

    def run(self) -> PipelineResult:
        cfg, out = self.cfg, self.out_dir
        result = PipelineResult(run_id=self.run_id, exit_code=EXIT_OK, out_dir=out)
        stage = "validate"
        try:
            self._start(stage)
            save_config_flat(cfg, get_config_flat_path(out))
            self._finish(stage, {"config": get_config_flat_path(out)})

            stage = "design"
            self._start(stage)
            design = run_design(cfg, out)
            self._finish(
                stage, {"design": get_design_path(out)}, design_summary(design)
            )

            stage = "sample"
            self._start(stage)
            ds = run_sample(cfg, out, design)
            self._finish(
                stage,
                {"dataset": get_dataset_dir(out)},
                {
                    "count_total": ds.count_total,
                    "count_feasible": ds.count_feasible,
                    "count_infeasible": ds.count_infeasible,
                },
            )

            round_ = 0
            while True:
                stage = "train"
                self._start(stage)
                params, train_report = run_train(cfg, out, ds, design, round_)
                self._finish(
                    stage,
                    {
                        "weights": get_weights_path(out),
                        "report": get_train_report_path(out),
                    },
                    train_report.summary(),
                )

                stage = "certify"
                self._start(stage)
                cert = run_certify(cfg, out, params, design, round_)
                if cert.certified:
                    self._finish(
                        stage,
                        {
                            "report": get_cert_report_path(out),
                            "indicator_log": get_indicator_log_path(out),
                        },
                        cert.summary(),
                    )
                    break
                if round_ >= int(cfg.max_retrain):
                    raise CertificationFailed(
                        f"Validation failed after {round_} retraining round(s): "
                        f"mu_tilde - eps_h = {cert.mu_tilde - cert.eps_h:.5f} "
                        f"< mu_crit = {cert.mu_crit}"
                    )
                round_ += 1
                logger.warning(f"Validation failed; retraining (round {round_})")
                self.manifest.retrain_rounds = round_
                self.registry.retrain(self.run_id, round_)
            result.retrain_rounds = round_

            stage = "bench"
            if self.bench:
                self._start(stage)
                summary = run_bench(cfg, out, params, design, ds)
                self._finish(
                    stage,
                    {"figures": get_figures_dir(out), "timing": get_timing_path(out)},
                    summary,
                )
            else:
                self.manifest.skip_stage(stage)
                self._set(stage, SKIPPED)
        except AMPCError as exc:
            logger.exception(f"Stage '{stage}' failed: {exc}")
            self._fail(stage, exc)
            result.exit_code = exc.exit_code
            result.failed_stage = stage
        except OSError as exc:
            logger.exception(f"Stage '{stage}' failed on I/O: {exc}")
            self._fail(stage, exc)
            result.exit_code = EXIT_IO
            result.failed_stage = stage
        except Exception as exc:
            self._fail(stage, exc)
            raise

        self.manifest.set_status(run_status(result.ok))
        self.manifest.save(self.manifest_path)
        self.registry.run_status(self.run_id, self.manifest.status)
        result.summaries = {
            name: rec["summary"] for name, rec in self.manifest.stages.items()
        }
        return result


def run_pipeline(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict[str, Any]] = None,
    out: Optional[Union[str, Path]] = None,
    bench: bool = True,
) -> PipelineResult:
    """
    Algorithm driver: validate constants, design (with eta halving), sample,
    train, certify, retrain on failure up to `max_retrain` rounds, benchmark.

    A failure in constant validation is reported as a failed `validate` stage
    before any output other than the manifest is written.
    """
    cfg = load_config(config_path, overrides)
    out_dir = output_dir_for(cfg, out)
    handler = add_file_handler(get_log_path(out_dir))
    try:
        try:
            cfg = validate_config(cfg)
        except AMPCError as exc:
            runner = PipelineRunner(
                cfg, out_dir, Path(config_path) if config_path else None, bench
            )
            bind_run_id(handler, runner.run_id)
            logger.error(f"Stage 'validate' failed: {exc}")
            runner.manifest.start_stage("validate")
            runner._fail("validate", exc)
            runner.registry.run_status(runner.run_id, FAILED)
            return PipelineResult(
                run_id=runner.run_id,
                exit_code=exc.exit_code,
                out_dir=out_dir,
                failed_stage="validate",
            )
        runner = PipelineRunner(
            cfg, out_dir, Path(config_path) if config_path else None, bench
        )
        bind_run_id(handler, runner.run_id)
        result = runner.run()
    finally:
        remove_handler(handler)
    if result.ok:
        logger.info(f"Pipeline {result.run_id} completed in {out_dir}")
    else:
        logger.error(
            f"Pipeline {result.run_id} failed at stage '{result.failed_stage}' "
            f"(exit {result.exit_code})"
        )
    return result
