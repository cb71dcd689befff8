"""
Statistical validation of the approximate controller.

Closed-loop trajectories under the approximation are checked against the
robust MPC at every visited state; the fraction of trajectories that stay
within the input-error bound until they reach the terminal set is turned into
a Hoeffding confidence statement.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from tqdm import tqdm

from ampc.core.config import write_key_value_file
from ampc.errors import ArtifactFormatError, CertificationFailed, OCPInfeasible
from ampc.learning.network import NetworkParams, infer
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import step
from ampc.mpc.ocp import OCPSolution, RMPCController, shift_warm_start
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

REACHED_TERMINAL = "ReachedTerminal"
TIMEOUT = "Timeout"
MPC_INFEASIBLE = "MPCInfeasible"
BOUND_VIOLATED = "BoundViolated"

CERTIFIED = "Certified"
FAILED = "Failed"

INDICATOR_LOG_HEADER = "index,seed,x1,x2,I,reason,len"
MAX_REJECTION_DRAWS = 100_000


class Policy(Protocol):
    def __call__(self, x: NDArray[np.float64]) -> float: ...


class Oracle(Protocol):
    """Reference feedback; `evaluate` returns None where it is undefined."""

    def evaluate(self, x: NDArray[np.float64]) -> Optional[float]: ...

    def is_feasible(self, x: NDArray[np.float64]) -> bool: ...

    def reset(self) -> None: ...


class NetworkPolicy:
    def __init__(self, params: NetworkParams) -> None:
        self.params = params

    def __call__(self, x: NDArray[np.float64]) -> float:
        return float(infer(self.params, x))


class RMPCOracle:
    """
    pi_MPC with the shift warm start along a trajectory. The last solution is
    memoized, so using the oracle as both policy and reference solves once per state.
    """

    def __init__(self, controller: RMPCController) -> None:
        self.controller = controller
        self._last: Optional[tuple[NDArray[np.float64], OCPSolution]] = None

    def reset(self) -> None:
        self._last = None

    def solve(self, x: ArrayLike) -> OCPSolution:
        xs = np.asarray(x, dtype=float).reshape(2)
        if self._last is not None and np.array_equal(self._last[0], xs):
            return self._last[1]
        warm = None
        if self._last is not None and self._last[1].optimal:
            warm = shift_warm_start(self._last[1], self.controller.design)
        sol = self.controller.solve(xs, warm=warm)
        self._last = (xs.copy(), sol)
        return sol

    def evaluate(self, x: NDArray[np.float64]) -> Optional[float]:
        sol = self.solve(x)
        return float(sol.inputs[0]) if sol.optimal else None

    def is_feasible(self, x: NDArray[np.float64]) -> bool:
        return self.solve(x).optimal

    def __call__(self, x: NDArray[np.float64]) -> float:
        u = self.evaluate(x)
        if u is None:
            raise OCPInfeasible(f"No optimal solution at x={np.asarray(x).tolist()}")
        return u


@dataclass
class Trajectory:
    """
    Closed loop from x0 under the approximation. errors[t] is
    |pi_MPC(x_t) - pi_approx(x_t)| for every state where both were evaluated.
    """

    states: NDArray[np.float64]
    inputs_approx: NDArray[np.float64]
    inputs_mpc: NDArray[np.float64]
    terminated: str
    indicator: int
    eta: float

    @property
    def x0(self) -> NDArray[np.float64]:
        return self.states[0]

    @property
    def length(self) -> int:
        """Number of closed-loop steps taken, T_i."""
        return int(self.states.shape[0] - 1)

    @property
    def errors(self) -> NDArray[np.float64]:
        n = min(len(self.inputs_approx), len(self.inputs_mpc))
        return np.abs(self.inputs_mpc[:n] - self.inputs_approx[:n])


def rollout(
    x0: ArrayLike,
    policy: Policy,
    oracle: Oracle,
    design: RMPCDesign,
    t_max: int,
    eta: Optional[float] = None,
) -> Trajectory:
    """
    Step x(t+1) = f(x(t), pi_approx(x(t))) from x0. At each visited state the
    oracle is evaluated and the input error compared with eta; the rollout stops
    on the first violation, at an undefined oracle, on entering the terminal set,
    or after t_max steps.

    Raises:
        ValueError if t_max < 1.
    """
    if t_max < 1:
        raise ValueError(f"t_max must be at least 1, got {t_max}")
    eta = design.eta if eta is None else eta
    ti = design.terminal
    x = np.asarray(x0, dtype=float).reshape(2).copy()
    states = [x]
    u_approx: list[float] = []
    u_mpc: list[float] = []
    terminated = TIMEOUT
    for t in range(t_max + 1):
        if not np.all(np.isfinite(x)):
            terminated = MPC_INFEASIBLE
            break
        reference = oracle.evaluate(x)
        if reference is None:
            terminated = MPC_INFEASIBLE
            break
        u = float(policy(x))
        u_mpc.append(reference)
        u_approx.append(u)
        if abs(reference - u) > eta:
            terminated = BOUND_VIOLATED
            break
        if ti.contains(x):
            terminated = REACHED_TERMINAL
            break
        if t == t_max:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            x = step(design.plant, x, u) if np.isfinite(u) else np.full(2, np.nan)
        states.append(x)
    indicator = int(terminated == REACHED_TERMINAL)
    return Trajectory(
        states=np.array(states),
        inputs_approx=np.array(u_approx),
        inputs_mpc=np.array(u_mpc),
        terminated=terminated,
        indicator=indicator,
        eta=eta,
    )


def indicator_at(traj: Trajectory, eta: float) -> int:
    """
    Indicator under another error bound from the logged errors. A rollout that
    stopped early cannot be credited, so only terminal arrivals can score 1.
    """
    if traj.terminated != REACHED_TERMINAL:
        return 0
    return int(bool(np.all(traj.errors <= eta)))


def empirical_risk(indicators: Sequence[int]) -> float:
    """
    Raises:
        ValueError on an empty list.
    """
    if len(indicators) == 0:
        raise ValueError("Empirical risk of an empty sample")
    return float(np.mean(np.asarray(indicators, dtype=float)))


def hoeffding_epsilon(delta_h: float, p: int) -> float:
    """sqrt(-ln(delta_h / 2) / (2 p))."""
    if not 0.0 < delta_h < 1.0:
        raise ValueError(f"delta_h must lie in (0, 1), got {delta_h}")
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    return math.sqrt(-math.log(delta_h / 2.0) / (2.0 * p))


def certification_passes(mu_tilde: float, eps_h: float, mu_crit: float) -> bool:
    return mu_crit <= mu_tilde - eps_h


def required_trajectories(mu_tilde: float, mu_crit: float, delta_h: float) -> int:
    """
    Smallest p for which an empirical risk of mu_tilde would certify mu_crit.

    Raises:
        ValueError if mu_tilde <= mu_crit.
    """
    if not mu_tilde > mu_crit:
        raise ValueError(f"mu_tilde={mu_tilde} cannot certify mu_crit={mu_crit}")
    hoeffding_epsilon(delta_h, 1)
    return int(math.ceil(-math.log(delta_h / 2.0) / (2.0 * (mu_tilde - mu_crit) ** 2)))


def sample_initial_condition(
    seed: int, design: RMPCDesign, oracle: Oracle
) -> NDArray[np.float64]:
    """
    Uniform draw over X accepted iff the robust MPC is feasible there.

    Raises:
        CertificationFailed if no feasible state is found.
    """
    rng = np.random.default_rng(seed)
    lower, upper = design.X.box_bounds()
    for _ in range(MAX_REJECTION_DRAWS):
        x = rng.uniform(lower, upper)
        oracle.reset()
        if oracle.is_feasible(x):
            return x
    raise CertificationFailed(
        f"No feasible initial state in {MAX_REJECTION_DRAWS} draws (seed {seed})"
    )


@dataclass(frozen=True)
class IndicatorRecord:
    index: int
    seed: int
    x1: float
    x2: float
    I: int
    reason: str
    length: int


@dataclass
class CertReport:
    p: int
    mu_tilde: float
    eps_h: float
    delta_h: float
    mu_crit: float
    verdict: str
    eta: float
    indicator_log: list[IndicatorRecord] = field(default_factory=list)
    batches: list[int] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def recheck(self) -> bool:
        """Verdict recomputed from the logged indicators only."""
        mu = empirical_risk([r.I for r in self.indicator_log])
        eps = hoeffding_epsilon(self.delta_h, len(self.indicator_log))
        return certification_passes(mu, eps, self.mu_crit)

    def summary(self) -> dict[str, Any]:
        reasons = [r.reason for r in self.indicator_log]
        return {
            "verdict": self.verdict,
            "p": self.p,
            "mu_tilde": self.mu_tilde,
            "eps_h": self.eps_h,
            "margin": self.mu_tilde - self.eps_h - self.mu_crit,
            "delta_h": self.delta_h,
            "mu_crit": self.mu_crit,
            "eta": self.eta,
            "batches": self.batches,
            "reached_terminal": reasons.count(REACHED_TERMINAL),
            "bound_violated": reasons.count(BOUND_VIOLATED),
            "timeout": reasons.count(TIMEOUT),
            "mpc_infeasible": reasons.count(MPC_INFEASIBLE),
        }


def _run_one(
    index: int,
    seed: int,
    policy: Policy,
    oracle: Oracle,
    design: RMPCDesign,
    t_max: int,
) -> tuple[IndicatorRecord, Trajectory]:
    x0 = sample_initial_condition(seed, design, oracle)
    traj = rollout(x0, policy, oracle, design, t_max)
    record = IndicatorRecord(
        index=index,
        seed=seed,
        x1=float(x0[0]),
        x2=float(x0[1]),
        I=traj.indicator,
        reason=traj.terminated,
        length=traj.length,
    )
    return record, traj


def _run_chunk(args: tuple[Any, ...]) -> list[tuple[IndicatorRecord, Trajectory]]:
    indices, base_seed, policy, oracle, design, t_max = args
    return [_run_one(i, base_seed + i, policy, oracle, design, t_max) for i in indices]


def certify(
    policy: Policy,
    oracle: Oracle,
    design: RMPCDesign,
    mu_crit: float = 0.9,
    delta_h: float = 0.05,
    p_max: int = 5000,
    batch0: int = 200,
    base_seed: int = 0,
    t_max: int = 2000,
    workers: int = 1,
    keep_trajectories: bool = False,
    progress: bool = True,
) -> CertReport:
    """
    Iterative validation: batch0 trajectories first, then doubling the total,
    until mu_crit <= mu_tilde - eps_h over all trajectories so far (Certified)
    or p_max trajectories have been used (Failed). Trajectory i starts from the
    rejection sample drawn with seed base_seed + i.
    """
    if not 0.0 < mu_crit < 1.0:
        raise ValueError(f"mu_crit must lie in (0, 1), got {mu_crit}")
    if batch0 < 1 or p_max < 1:
        raise ValueError("batch0 and p_max must be at least 1")
    hoeffding_epsilon(delta_h, 1)

    log: list[IndicatorRecord] = []
    kept: list[Trajectory] = []
    batches: list[int] = []
    target = min(batch0, p_max)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while True:
            indices = list(range(len(log), target))
            batches.append(len(indices))
            with tqdm(
                total=len(indices), desc="certify", disable=not progress, leave=False
            ) as pbar:
                if pool is None:
                    for i in indices:
                        record, traj = _run_one(
                            i, base_seed + i, policy, oracle, design, t_max
                        )
                        log.append(record)
                        if keep_trajectories:
                            kept.append(traj)
                        pbar.update(1)
                else:
                    chunks = [indices[k::workers] for k in range(workers)]
                    jobs = [
                        (c, base_seed, policy, oracle, design, t_max)
                        for c in chunks
                        if c
                    ]
                    results = [
                        item for part in pool.map(_run_chunk, jobs) for item in part
                    ]
                    results.sort(key=lambda item: item[0].index)
                    for record, traj in results:
                        log.append(record)
                        if keep_trajectories:
                            kept.append(traj)
                    pbar.update(len(indices))

            p = len(log)
            mu = empirical_risk([r.I for r in log])
            eps = hoeffding_epsilon(delta_h, p)
            logger.info(
                f"Validation p={p}: mu_tilde={mu:.5f}, eps_h={eps:.5f}, "
                f"mu_tilde - eps_h={mu - eps:.5f} (mu_crit={mu_crit})"
            )
            if certification_passes(mu, eps, mu_crit):
                verdict = CERTIFIED
                break
            if p >= p_max:
                verdict = FAILED
                break
            target = min(2 * target, p_max)
    finally:
        if pool is not None:
            pool.shutdown()

    report = CertReport(
        p=p,
        mu_tilde=mu,
        eps_h=eps,
        delta_h=delta_h,
        mu_crit=mu_crit,
        verdict=verdict,
        eta=design.eta,
        indicator_log=log,
        batches=batches,
        trajectories=kept,
    )
    if report.certified:
        logger.info(f"Certified: mu_crit={mu_crit} <= {mu - eps:.5f} with p={p}")
    else:
        logger.error(
            f"Validation failed after p={p} trajectories (mu_tilde - eps_h = {mu - eps:.5f})"
        )
    return report


def write_cert_report(report: CertReport, path: Union[str, Path]) -> None:
    write_key_value_file(report.summary(), path, header="certification report")
    logger.info(f"Wrote certification report to {path}")


def write_indicator_log(report: CertReport, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [INDICATOR_LOG_HEADER]
    for r in report.indicator_log:
        lines.append(
            f"{r.index},{r.seed},{r.x1:.17g},{r.x2:.17g},{r.I},{r.reason},{r.length}"
        )
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_indicator_log(path: Union[str, Path]) -> list[IndicatorRecord]:
    """
    Raises:
        ArtifactFormatError naming the line of a malformed row.
    """
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as f:
        if f.readline().strip() != INDICATOR_LOG_HEADER:
            raise ArtifactFormatError(
                path, 1, f"expected header '{INDICATOR_LOG_HEADER}'"
            )
        for lineno, raw in enumerate(f, start=2):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 7:
                raise ArtifactFormatError(
                    path, lineno, f"expected 7 fields, got {len(fields)}"
                )
            try:
                records.append(
                    IndicatorRecord(
                        index=int(fields[0]),
                        seed=int(fields[1]),
                        x1=float(fields[2]),
                        x2=float(fields[3]),
                        I=int(fields[4]),
                        reason=fields[5],
                        length=int(fields[6]),
                    )
                )
            except ValueError as exc:
                raise ArtifactFormatError(path, lineno, str(exc)) from exc
    return records
