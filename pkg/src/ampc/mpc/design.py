"""
Robust MPC design: constraint tightening, terminal disturbance ball and
terminal ingredients (LQR-based ellipsoidal terminal set).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.core.config import write_key_value_file
from ampc.errors import DesignInfeasible
from ampc.mpc.model import (
    PlantConfig,
    StabilizabilityConstants,
    default_polytopes,
    estimate_lipschitz,
    jacobians,
    step,
)
from ampc.mpc.polytope import Polytope
from ampc.mpc.riccati import closed_loop_weight, dlqr
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

BISECTION_STEPS = 60
SCAN_FACTOR = 0.7
MIN_GRID_COUNT = 8
LIPSCHITZ_GRID_STEP = 1e-2


@dataclass(frozen=True, eq=False)
class TighteningSchedule:
    epsilon: float
    epsilons: NDArray[np.float64]
    rho: float

    def __post_init__(self) -> None:
        eps = np.asarray(self.epsilons, dtype=float).copy()
        eps.setflags(write=False)
        object.__setattr__(self, "epsilons", eps)

    @property
    def N(self) -> int:
        return int(self.epsilons.size - 1)

    def factor(self, k: int) -> float:
        """Shrink factor 1 - eps_k of stage k."""
        return float(1.0 - self.epsilons[k])


@dataclass(frozen=True)
class CheckReport:
    """Worst margins of the terminal conditions over a grid of the terminal ellipse."""

    margins: dict[str, float]
    worst_points: dict[str, tuple[float, float]]
    points_checked: int

    @property
    def passed(self) -> bool:
        return all(m >= 0.0 for m in self.margins.values())

    @property
    def failing(self) -> Optional[str]:
        for name, margin in self.margins.items():
            if margin < 0.0:
                return name
        return None


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    """
    Terminal cost V_f(x) = x'Px, controller k_f(x) = K_f x and set {V_f <= alpha_f}.
    P_lqr is the Riccati solution. P solves the closed-loop Lyapunov equation
    with weight (1 + slack) Q + K_f'RK_f, so slack = 0 gives P = P_lqr.
    """

    P: NDArray[np.float64]
    K_f: NDArray[np.float64]
    alpha_f: float
    wN_radius: float
    P_lqr: NDArray[np.float64] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float).reshape(2, 2).copy()
        K = np.asarray(self.K_f, dtype=float).reshape(1, 2).copy()
        P_lqr = P if self.P_lqr is None else self.P_lqr
        P_lqr = np.asarray(P_lqr, dtype=float).reshape(2, 2).copy()
        for arr in (P, K, P_lqr):
            arr.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "K_f", K)
        object.__setattr__(self, "P_lqr", P_lqr)
        if np.min(np.linalg.eigvalsh(P)) <= 0.0:
            raise ValueError("Terminal weight P must be positive definite")
        if not self.alpha_f > 0.0:
            raise ValueError(f"alpha_f must be positive, got {self.alpha_f}")

    def V_f(self, x: ArrayLike) -> NDArray[np.float64] | float:
        xs = np.asarray(x, dtype=float)
        val = np.einsum("...i,ij,...j->...", xs, self.P, xs)
        return float(val) if np.ndim(val) == 0 else val

    def k_f(self, x: ArrayLike) -> NDArray[np.float64] | float:
        xs = np.asarray(x, dtype=float)
        val = xs @ self.K_f[0]
        return float(val) if np.ndim(val) == 0 else val

    def contains(self, x: ArrayLike, tol: float = 0.0) -> bool:
        return bool(self.V_f(x) <= self.alpha_f + tol)

    def with_alpha(self, alpha_f: float) -> TerminalIngredients:
        return TerminalIngredients(
            P=self.P,
            K_f=self.K_f,
            alpha_f=alpha_f,
            wN_radius=self.wN_radius,
            P_lqr=self.P_lqr,
        )


@dataclass(frozen=True, eq=False)
class RMPCDesign:
    """Everything the optimal control problem and the validation need."""

    plant: PlantConfig
    consts: StabilizabilityConstants
    X: Polytope
    U: Polytope
    U_t: Polytope
    schedule: TighteningSchedule
    terminal: TerminalIngredients
    check: CheckReport
    eta_halvings: int = 0
    lipschitz_estimate: float = float("nan")
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def eta(self) -> float:
        return self.consts.eta

    def stage_sets(self, k: int) -> tuple[Polytope, Polytope]:
        return tightened_sets(self.X, self.U_t, self.schedule, k)


def tightening_epsilon(
    consts: StabilizabilityConstants,
    X: Polytope,
    U_t: Polytope,
    epsilon_override: Optional[float] = None,
) -> float:
    """
    eps = eta * lambda * sqrt(c_u / c_l) * max(||H||_inf, ||L_t||_inf * k_max),
    or the override when one is configured.
    """
    if epsilon_override is not None:
        logger.warning(
            f"Using configured tightening parameter epsilon={epsilon_override:.6g} "
            "instead of the conservative bound"
        )
        return float(epsilon_override)
    ratio = np.sqrt(consts.c_delta_u / consts.c_delta_l)
    worst = max(X.inf_norm, U_t.inf_norm * consts.k_max)
    return float(consts.eta * consts.lipschitz * ratio * worst)


def schedule(epsilon: float, rho: float, N: int) -> TighteningSchedule:
    """
    eps_k = eps * (1 - sqrt(rho)^k) / (1 - sqrt(rho)), k = 0..N.

    Raises:
        DesignInfeasible if some eps_k >= 1 (the tightened sets would be empty).
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if epsilon < 0.0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    if N < 0:
        raise ValueError(f"N must be non-negative, got {N}")
    sqrt_rho = np.sqrt(rho)
    k = np.arange(N + 1, dtype=float)
    eps = epsilon * (1.0 - sqrt_rho**k) / (1.0 - sqrt_rho)
    if np.any(eps >= 1.0):
        first = int(np.argmax(eps >= 1.0))
        raise DesignInfeasible(
            f"Tightening eps_{first} = {eps[first]:.4f} >= 1: tightened sets are empty"
        )
    return TighteningSchedule(epsilon=float(epsilon), epsilons=eps, rho=float(rho))


def tightened_sets(
    X: Polytope, U_t: Polytope, sched: TighteningSchedule, k: int
) -> tuple[Polytope, Polytope]:
    """Stage-k sets (1 - eps_k) X and (1 - eps_k) U_t."""
    if not 0 <= k <= sched.N:
        raise ValueError(f"Stage {k} outside 0..{sched.N}")
    factor = sched.factor(k)
    return X.scaled(factor), U_t.scaled(factor)


def wN_radius(consts: StabilizabilityConstants, N: int) -> float:
    """Radius lambda * eta * sqrt(rho^N * c_u / c_l) of the terminal ball."""
    return float(
        consts.lipschitz
        * consts.eta
        * np.sqrt(consts.rho**N * consts.c_delta_u / consts.c_delta_l)
    )


def ellipse_box_alpha(
    P: NDArray[np.float64], K: NDArray[np.float64], X: Polytope, U: Polytope
) -> float:
    """
    Largest alpha with {x'Px <= alpha} inside X and K{x'Px <= alpha} inside U:
    for a halfspace a'x <= b the support of the ellipse is sqrt(alpha * a'P^{-1}a).
    """
    P_inv = np.linalg.inv(P)
    rows = [(a, b) for a, b in zip(X.normals, X.offsets)]
    rows += [(float(l[0]) * K[0], b) for l, b in zip(U.normals, U.offsets)]
    bounds = [b**2 / float(a @ P_inv @ a) for a, b in rows if np.any(a != 0.0)]
    return float(min(bounds))


def _ellipse_points(
    P: NDArray[np.float64], alpha: float, count: int
) -> NDArray[np.float64]:
    """count angles x count radial shells of {x'Px <= alpha}, boundary included."""
    L = np.linalg.cholesky(P)
    angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    radii = np.arange(1, count + 1, dtype=float) / count
    circle = np.column_stack([np.cos(angles), np.sin(angles)])
    # x = sqrt(alpha) r L^{-T} v  gives  x'Px = alpha r^2
    directions = np.linalg.solve(L.T, circle.T).T
    pts = np.sqrt(alpha) * radii[:, None, None] * directions[None, :, :]
    return pts.reshape(-1, 2)


def check_terminal(
    ti: TerminalIngredients,
    plant: PlantConfig,
    X: Polytope,
    U_t: Polytope,
    sched: TighteningSchedule,
    grid_count: int = 64,
) -> CheckReport:
    """
    Grid check of the terminal conditions on grid_count**2 points of the ellipse:
    invariance under the disturbance ball, Lyapunov decrease with the stage cost,
    and membership of (x, k_f(x)) in the stage-N tightened sets.
    """
    if grid_count < MIN_GRID_COUNT:
        raise ValueError(
            f"grid_count must be at least {MIN_GRID_COUNT}, got {grid_count}"
        )
    pts = _ellipse_points(ti.P, ti.alpha_f, grid_count)
    u = pts @ ti.K_f[0]
    nxt = step(plant, pts, u)
    V_x = np.asarray(ti.V_f(pts))
    V_next = np.asarray(ti.V_f(nxt))
    stage = np.einsum("ni,ij,nj->n", pts, plant.Q, pts) + plant.R * u**2

    inflation = np.sqrt(np.max(np.linalg.eigvalsh(ti.P))) * ti.wN_radius
    inv = ti.alpha_f - (np.sqrt(np.maximum(V_next, 0.0)) + inflation) ** 2
    dec = V_x - stage - V_next
    X_N, U_N = tightened_sets(X, U_t, sched, sched.N)
    con = np.minimum(
        np.min(X_N.slack(pts), axis=-1), np.min(U_N.slack(u[:, None]), axis=-1)
    )

    margins: dict[str, float] = {}
    worst: dict[str, tuple[float, float]] = {}
    for name, values in (("invariance", inv), ("decrease", dec), ("constraints", con)):
        idx = int(np.argmin(values))
        margins[name] = float(values[idx])
        worst[name] = (float(pts[idx, 0]), float(pts[idx, 1]))
    return CheckReport(margins=margins, worst_points=worst, points_checked=len(pts))


def terminal_ingredients(
    plant: PlantConfig,
    consts: StabilizabilityConstants,
    X: Polytope,
    U_t: Polytope,
    sched: TighteningSchedule,
    slack: float = 1.0,
    grid_count: int = 64,
    alpha_min: float = 1e-9,
) -> tuple[TerminalIngredients, CheckReport]:
    """
    LQR terminal ingredients at the origin. The terminal weight keeps `slack` * Q
    of decrease in reserve for the nonlinearity. alpha_f is the largest value found by a
    downward scan from the ellipse-in-box bound followed by bisection.

    Raises:
        DesignInfeasible if no alpha_f >= alpha_min passes `check_terminal`.
    """
    if slack < 0.0:
        raise ValueError(f"terminal_cost_slack must be non-negative, got {slack}")
    A, B = jacobians(plant, np.zeros(2), 0.0)
    K, P_lqr = dlqr(A, B, plant.Q, plant.R)
    P = closed_loop_weight(A, B, K, plant.Q, plant.R, margin=slack)
    radius = wN_radius(consts, sched.N)
    X_N, U_N = tightened_sets(X, U_t, sched, sched.N)
    alpha0 = ellipse_box_alpha(P, K, X_N, U_N)
    base = TerminalIngredients(
        P=P, K_f=K, alpha_f=alpha0, wN_radius=radius, P_lqr=P_lqr
    )

    def _check(alpha: float) -> CheckReport:
        return check_terminal(base.with_alpha(alpha), plant, X, U_t, sched, grid_count)

    alpha = alpha0
    failed_above: Optional[float] = None
    report = _check(alpha)
    while not report.passed:
        logger.debug(
            f"alpha_f={alpha:.4g} rejected by {report.failing} "
            f"(margin {report.margins[report.failing or '']:.3g})"
        )
        failed_above = alpha
        alpha *= SCAN_FACTOR
        if alpha < alpha_min:
            raise DesignInfeasible(
                f"No terminal radius in [{alpha_min:g}, {alpha0:.4g}] passes the "
                f"terminal check (last failure: {report.failing})"
            )
        report = _check(alpha)

    if failed_above is not None:
        lo, hi = alpha, failed_above
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            mid_report = _check(mid)
            if mid_report.passed:
                lo, report = mid, mid_report
            else:
                hi = mid
        alpha = lo

    logger.info(
        f"Terminal set: alpha_f={alpha:.4g} (ellipse-in-box bound {alpha0:.4g}), "
        f"margins {', '.join(f'{k}={v:.3g}' for k, v in report.margins.items())}"
    )
    return base.with_alpha(alpha), report


def _design_once(
    plant: PlantConfig,
    consts: StabilizabilityConstants,
    epsilon_override: Optional[float],
    slack: float,
    grid_count: int,
    alpha_min: float,
) -> tuple[
    Polytope, Polytope, Polytope, TighteningSchedule, TerminalIngredients, CheckReport
]:
    X, U, U_t = default_polytopes(plant, consts.eta)
    eps = tightening_epsilon(consts, X, U_t, epsilon_override)
    sched = schedule(eps, consts.rho, plant.N)
    ti, report = terminal_ingredients(
        plant,
        consts,
        X,
        U_t,
        sched,
        slack=slack,
        grid_count=grid_count,
        alpha_min=alpha_min,
    )
    return X, U, U_t, sched, ti, report


def design_rmpc(cfg: Mapping[str, Any]) -> RMPCDesign:
    """
    Full design from config. A failing design is retried with eta halved (and a
    configured epsilon scaled along, as epsilon is linear in eta), up to
    `max_eta_halvings` times.

    Raises:
        DesignInfeasible if eta violates the disturbance bound or all retries fail.
    """
    plant = PlantConfig.from_config(cfg)
    consts = StabilizabilityConstants.from_config(cfg)
    consts.check_disturbance_bound()
    override = cfg.get("epsilon_override")
    override = None if override is None else float(override)
    max_halvings = int(cfg.get("max_eta_halvings", 8))
    slack = float(cfg.get("terminal_cost_slack", 1.0))
    grid_count = int(cfg.get("terminal_grid_count", 64))
    alpha_min = float(cfg.get("alpha_min", 1e-9))

    X_full = default_polytopes(plant, consts.eta)[0]
    lam_grid = estimate_lipschitz(plant, X_full, LIPSCHITZ_GRID_STEP)
    if lam_grid > consts.lipschitz * (1.0 + 1e-6):
        logger.warning(
            f"Configured lambda={consts.lipschitz:.4g} is below the grid estimate "
            f"{lam_grid:.4g}"
        )

    halvings = 0
    while True:
        try:
            X, U, U_t, sched, ti, report = _design_once(
                plant, consts, override, slack, grid_count, alpha_min
            )
            break
        except DesignInfeasible as exc:
            if halvings >= max_halvings:
                raise
            halvings += 1
            consts = consts.with_eta(0.5 * consts.eta)
            if override is not None:
                override *= 0.5
            logger.warning(f"Design failed ({exc}); retrying with eta={consts.eta:.4g}")

    logger.info(
        f"RMPC design: eta={consts.eta:.4g}, epsilon={sched.epsilon:.4g}, "
        f"eps_N={sched.epsilons[-1]:.4f}, W_N radius={ti.wN_radius:.4g}"
    )
    return RMPCDesign(
        plant=plant,
        consts=consts,
        X=X,
        U=U,
        U_t=U_t,
        schedule=sched,
        terminal=ti,
        check=report,
        eta_halvings=halvings,
        lipschitz_estimate=lam_grid,
    )


def design_summary(design: RMPCDesign) -> dict[str, Any]:
    ti = design.terminal
    return {
        "eta": design.eta,
        "eta_halvings": design.eta_halvings,
        "epsilon": design.schedule.epsilon,
        "eps_N": float(design.schedule.epsilons[-1]),
        "wN_radius": ti.wN_radius,
        "p11": float(ti.P[0, 0]),
        "p12": float(ti.P[0, 1]),
        "p22": float(ti.P[1, 1]),
        "p_lqr11": float(ti.P_lqr[0, 0]),
        "p_lqr12": float(ti.P_lqr[0, 1]),
        "p_lqr22": float(ti.P_lqr[1, 1]),
        "kf1": float(ti.K_f[0, 0]),
        "kf2": float(ti.K_f[0, 1]),
        "alpha_f": ti.alpha_f,
        "lambda_grid": design.lipschitz_estimate,
        "margin_invariance": design.check.margins["invariance"],
        "margin_decrease": design.check.margins["decrease"],
        "margin_constraints": design.check.margins["constraints"],
    }


def write_design_report(design: RMPCDesign, path: Union[str, Path]) -> None:
    write_key_value_file(design_summary(design), path, header="RMPC design report")
    logger.info(f"Wrote design report to {path}")
