"""
Robust MPC optimal control problem and the feedback pi_MPC.

The problem is transcribed by multiple shooting and solved by SQP. Each
subproblem is condensed onto the input steps and solved by the active-set QP
with one elastic slack shared by all normalized constraints, so infeasible
states get a reliable verdict instead of a failed subproblem.

Steps are globalized by an l1 merit line search. The penalty starts at
`merit_penalty` and is raised only as far as each step needs to be a descent
direction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.errors import OCPInfeasible
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import jacobians, step
from ampc.mpc.qp import ActiveSetQP, QPResult
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
MAXITER = "MaxIter"

SLACK_TOL = 1e-6
DEFECT_TOL = 1e-8
CONSTRAINT_TOL = 1e-6
TERMINAL_TOL = 1e-8
KKT_TOL = 1e-6
SLACK_QUADRATIC = 1.0
LINE_SEARCH_STEPS = 30
ARMIJO = 1e-4
EPS = float(np.finfo(float).eps)
# merit changes below this relative size are rounding noise
MERIT_ROUNDOFF = 1e3 * EPS


@dataclass(frozen=True, eq=False)
class OCPSolution:
    """
    Predicted inputs u(0..N-1|t) and states x(0..N|t). `active_set` is the
    working set of the last QP subproblem, reused to warm start the next solve.
    `kkt_residual` is the larger of the scaled stationarity and complementarity
    of the last subproblem and the primal residuals (defects, violation).
    """

    inputs: NDArray[np.float64]
    states: NDArray[np.float64]
    cost: float
    status: str
    iterations: int
    kkt_residual: float
    slack: float = 0.0
    active_set: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        inputs = np.array(self.inputs, dtype=float).reshape(-1)
        states = np.array(self.states, dtype=float).reshape(-1, 2)
        if states.shape[0] != inputs.size + 1:
            raise ValueError(
                f"{inputs.size} inputs need {inputs.size + 1} states, got {states.shape[0]}"
            )
        inputs.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "states", states)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def horizon(self) -> int:
        return int(self.inputs.size)

    def summary(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "cost": self.cost,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
            "slack": self.slack,
            "u0": float(self.inputs[0]),
            "x_N1": float(self.states[-1, 0]),
            "x_N2": float(self.states[-1, 1]),
        }


def shift_warm_start(sol: OCPSolution, design: RMPCDesign) -> OCPSolution:
    """
    Shift a solution by one stage for the next closed-loop state, padding with
    the terminal controller: u(N-1) = K_f x(N), x(N+1) = f(x(N), K_f x(N)).
    """
    x_N = sol.states[-1]
    u_pad = float(design.terminal.k_f(x_N))
    x_pad = step(design.plant, x_N, u_pad)
    return replace(
        sol,
        inputs=np.append(sol.inputs[1:], u_pad),
        states=np.vstack([sol.states[1:], x_pad]),
        active_set=(),
    )


class RMPCController:
    """
    Solver for the tightened finite-horizon problem of one design.
    Stateless between calls; warm starts are passed explicitly.
    """

    def __init__(
        self,
        design: RMPCDesign,
        max_iter: int = 200,
        tol: float = 1e-8,
        elastic_penalty: float = 1e6,
        merit_penalty: float = 1.0,
    ) -> None:
        if max_iter < 1:
            raise ValueError(f"sqp_max_iter must be at least 1, got {max_iter}")
        if not tol > 0.0:
            raise ValueError(f"sqp_tol must be positive, got {tol}")
        self.design = design
        self.max_iter = max_iter
        self.tol = tol
        self.elastic_penalty = elastic_penalty
        self.merit_penalty = merit_penalty

        plant = design.plant
        self.N = plant.N
        ti = design.terminal
        factors = 1.0 - design.schedule.epsilons
        self._x_normals = design.X.normals
        self._x_offsets = factors[:, None] * design.X.offsets[None, :]
        self._u_normals = design.U_t.normals[:, 0]
        self._u_offsets = factors[:, None] * design.U_t.offsets[None, :]
        x_lo, x_hi = design.X.box_bounds()
        u_lo, u_hi = design.U_t.box_bounds()
        self._x_lo = factors[:, None] * x_lo
        self._x_hi = factors[:, None] * x_hi
        self._u_lo = factors * u_lo[0]
        self._u_hi = factors * u_hi[0]
        weights = np.repeat(plant.Q[None, :, :], self.N, axis=0)
        weights[-1] = ti.P
        self._weights = weights
        # absolute rounding noise of the l1 defect sum, states carried around x_e
        self._defect_noise = 20.0 * EPS * self.N * (1.0 + float(np.max(plant.x_e)))

    @classmethod
    def from_config(cls, design: RMPCDesign, cfg: Mapping[str, Any]) -> RMPCController:
        return cls(
            design,
            max_iter=int(cfg.get("sqp_max_iter", 200)),
            tol=float(cfg.get("sqp_tol", 1e-8)),
            elastic_penalty=float(cfg.get("elastic_penalty", 1e6)),
            merit_penalty=float(cfg.get("merit_penalty", 1.0)),
        )

    # ------------------------------------------------------------------ helpers

    def cost(self, states: NDArray[np.float64], inputs: NDArray[np.float64]) -> float:
        plant = self.design.plant
        xs = states[:-1]
        stage = np.einsum("ki,ij,kj->", xs, plant.Q, xs)
        stage += plant.R * float(inputs @ inputs)
        return float(stage + self.design.terminal.V_f(states[-1]))

    def _initial_guess(
        self, x0: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Saturated terminal-controller rollout, states clipped into the stage sets."""
        plant = self.design.plant
        K = self.design.terminal.K_f[0]
        xs = np.zeros((self.N + 1, 2))
        us = np.zeros(self.N)
        xs[0] = x0
        for k in range(self.N):
            us[k] = np.clip(K @ xs[k], self._u_lo[k], self._u_hi[k])
            nxt = step(plant, xs[k], us[k])
            xs[k + 1] = np.clip(nxt, self._x_lo[k + 1], self._x_hi[k + 1])
        return xs, us

    def _defects(
        self, xs: NDArray[np.float64], us: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        with np.errstate(over="ignore", invalid="ignore"):
            return step(self.design.plant, xs[:-1], us) - xs[1:]

    def _violations(
        self, xs: NDArray[np.float64], us: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Normalized constraint violations (inputs, states 1..N-1, terminal)."""
        u_slack = self._u_offsets[:-1] - us[:, None] * self._u_normals[None, :]
        x_slack = self._x_offsets[1:-1] - xs[1:-1] @ self._x_normals.T
        ti = self.design.terminal
        term = float(ti.V_f(xs[-1])) / ti.alpha_f - 1.0
        return np.concatenate(
            [
                np.maximum(-u_slack.ravel(), 0.0),
                np.maximum(-x_slack.ravel(), 0.0),
                [max(term, 0.0)],
            ]
        )

    def _infeasibility(self, xs: NDArray[np.float64], us: NDArray[np.float64]) -> float:
        """l1 norm of the shooting defects plus the constraint violations."""
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
            return float("inf")
        try:
            defects = self._defects(xs, us)
        except ValueError:
            return float("inf")
        if not np.all(np.isfinite(defects)):
            return float("inf")
        return float(np.sum(np.abs(defects)) + np.sum(self._violations(xs, us)))

    def _merit(
        self, xs: NDArray[np.float64], us: NDArray[np.float64], penalty: float
    ) -> float:
        infeasibility = self._infeasibility(xs, us)
        if not np.isfinite(infeasibility):
            return float("inf")
        return self.cost(xs, us) + penalty * infeasibility

    def _objective_model(
        self,
        xs: NDArray[np.float64],
        us: NDArray[np.float64],
        du: NDArray[np.float64],
        dx: NDArray[np.float64],
    ) -> tuple[float, float]:
        """Slope and second-order term of the (quadratic) objective along a step."""
        R = self.design.plant.R
        slope = 2.0 * np.einsum("ki,kij,kj->", xs[1:], self._weights, dx)
        slope += 2.0 * R * float(us @ du)
        curvature = np.einsum("ki,kij,kj->", dx, self._weights, dx)
        curvature += R * float(du @ du)
        return float(slope), float(curvature)

    def _optimality(self, qp: ActiveSetQP, result: QPResult) -> float:
        """
        Scaled stationarity and multiplier-weighted complementarity of the
        current iterate. At the subproblem solution g + A'lam = -H dz, so the
        input rows of H dz measure stationarity with the QP multipliers.
        """
        N = self.N
        du = result.z[:N]
        stationarity = float(np.max(np.abs(qp.H[:N, :N] @ du), initial=0.0))
        stationarity /= 1.0 + float(np.max(np.abs(qp.g[:N]), initial=0.0))
        lam = result.multipliers[:-1]
        complementarity = float(np.max(lam * np.abs(qp.b[:-1]), initial=0.0))
        complementarity /= 1.0 + float(np.max(lam, initial=0.0))
        return max(stationarity, complementarity)

    def _linearized_violation(self, qp: ActiveSetQP, du: NDArray[np.float64]) -> float:
        """l1 violation of the linearized constraints left after the step du."""
        rows = qp.A[:-1, : self.N] @ du - qp.b[:-1]
        return float(np.sum(np.maximum(rows, 0.0)))

    def _primal_residuals(
        self, xs: NDArray[np.float64], us: NDArray[np.float64]
    ) -> tuple[float, float]:
        """Largest shooting defect and largest constraint violation."""
        defects = self._defects(xs, us)
        violation = float(np.max(self._violations(xs, us)))
        return float(np.max(np.abs(defects))), violation

    def _verdict(self, sigma: float, feasible: bool, kkt: float) -> str:
        """Status of an iterate at which the SQP stops without converging."""
        if sigma > SLACK_TOL:
            return INFEASIBLE
        if feasible and kkt <= KKT_TOL:
            return OPTIMAL
        return MAXITER

    def _condense(
        self, xs: NDArray[np.float64], us: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """
        Linearized shooting map dx_k = Gamma_k du + g_k for k = 1..N, with the
        defects of the current iterate folded into g.
        """
        A, B = jacobians(self.design.plant, xs[:-1], us)
        defects = self._defects(xs, us)
        gamma = np.zeros((self.N, 2, self.N))
        drift = np.zeros((self.N, 2))
        row = np.zeros((2, self.N))
        acc = np.zeros(2)
        for k in range(self.N):
            row = A[k] @ row
            row[:, k] = B[k, :, 0]
            acc = A[k] @ acc + defects[k]
            gamma[k] = row
            drift[k] = acc
        return gamma, drift

    def _subproblem(
        self,
        xs: NDArray[np.float64],
        us: NDArray[np.float64],
        gamma: NDArray[np.float64],
        drift: NDArray[np.float64],
    ) -> ActiveSetQP:
        N = self.N
        plant = self.design.plant
        ti = self.design.terminal
        n = N + 1
        pred = xs[1:] + drift

        weighted = np.einsum("kij,kjn->kin", self._weights, gamma)
        G2 = gamma.reshape(2 * N, N)
        hess = np.zeros((n, n))
        hess[:N, :N] = 2.0 * (G2.T @ weighted.reshape(2 * N, N) + plant.R * np.eye(N))
        hess[N, N] = 2.0 * SLACK_QUADRATIC
        grad = np.zeros(n)
        grad[:N] = 2.0 * np.einsum("kin,kij,kj->n", gamma, self._weights, pred)
        grad[:N] += 2.0 * plant.R * us
        grad[N] = self.elastic_penalty

        blocks_A = []
        blocks_b = []
        # inputs, stages 0..N-1
        r_u = self._u_normals.size
        A_u = np.zeros((N * r_u, n))
        for i, a in enumerate(self._u_normals):
            A_u[np.arange(N) * r_u + i, np.arange(N)] = a
        b_u = (self._u_offsets[:-1] - us[:, None] * self._u_normals[None, :]).ravel()
        blocks_A.append(A_u)
        blocks_b.append(b_u)
        # states, stages 1..N-1
        if N > 1:
            A_x = np.einsum("ri,kin->krn", self._x_normals, gamma[:-1])
            A_x = A_x.reshape(-1, N)
            b_x = (self._x_offsets[1:-1] - pred[:-1] @ self._x_normals.T).ravel()
            blocks_A.append(np.hstack([A_x, np.zeros((A_x.shape[0], 1))]))
            blocks_b.append(b_x)
        # terminal ellipse, supporting halfspace at the radial projection of x(N)
        y = xs[-1]
        V_y = float(ti.V_f(y))
        A_t = np.zeros((1, n))
        b_t = np.ones(1)
        if V_y > 1e-14 * ti.alpha_f:
            normal = ti.P @ (y * np.sqrt(ti.alpha_f / V_y)) / ti.alpha_f
            A_t[0, :N] = normal @ gamma[-1]
            b_t[0] = 1.0 - normal @ pred[-1]
        blocks_A.append(A_t)
        blocks_b.append(b_t)

        A_all = np.vstack(blocks_A)
        A_all[:, N] = -1.0
        b_all = np.concatenate(blocks_b)
        # sigma >= 0
        sigma_row = np.zeros((1, n))
        sigma_row[0, N] = -1.0
        A_all = np.vstack([A_all, sigma_row])
        b_all = np.append(b_all, 0.0)
        return ActiveSetQP(hess, grad, A_all, b_all)

    # ------------------------------------------------------------------ solve

    def solve(self, x0: ArrayLike, warm: Optional[OCPSolution] = None) -> OCPSolution:
        """
        SQP on the multiple-shooting transcription from x0.

        Returns a solution with status Optimal, Infeasible or MaxIter; states
        outside X are Infeasible without iterating.
        """
        x0 = np.asarray(x0, dtype=float).reshape(2)
        if not np.all(np.isfinite(x0)):
            raise ValueError(f"Query state must be finite, got {x0}")
        if not self.design.X.contains(x0):
            xs, us = np.zeros((self.N + 1, 2)), np.zeros(self.N)
            xs[0] = x0
            return OCPSolution(
                us, xs, float("inf"), INFEASIBLE, 0, float("inf"), float("inf")
            )

        working: Optional[tuple[int, ...]] = None
        if warm is not None and warm.horizon == self.N:
            xs = np.array(warm.states, dtype=float)
            us = np.array(warm.inputs, dtype=float)
            xs[0] = x0
            working = warm.active_set or None
        else:
            xs, us = self._initial_guess(x0)

        ti = self.design.terminal
        penalty = self.merit_penalty
        retried = False
        sigma = 0.0
        optimality = float("inf")
        status = ""
        it = 0
        while it < self.max_iter:
            it += 1
            gamma, drift = self._condense(xs, us)
            qp = self._subproblem(xs, us, gamma, drift)
            z0 = np.zeros(self.N + 1)
            z0[-1] = max(0.0, float(np.max(-qp.b))) + 1e-9
            result = qp.solve(z0, working=working)
            if not result.optimal:
                logger.warning(
                    f"QP subproblem unsolved in SQP iteration {it} "
                    f"at x0=({x0[0]:.4g}, {x0[1]:.4g})"
                )
                status = MAXITER
                break
            working = result.active
            du = result.z[: self.N]
            sigma = float(result.z[-1])
            dx = gamma @ du + drift
            optimality = self._optimality(qp, result)
            infeasibility = self._infeasibility(xs, us)
            step_norm = max(float(np.max(np.abs(du))), float(np.max(np.abs(dx))))
            scale = 1.0 + max(float(np.max(np.abs(us))), float(np.max(np.abs(xs))))

            small_step = step_norm <= self.tol * scale
            if small_step or (optimality <= self.tol and infeasibility <= self.tol):
                xs[1:] += dx
                us = us + du
                if sigma > SLACK_TOL:
                    status = INFEASIBLE
                    break
                V_N = float(ti.V_f(xs[-1]))
                if V_N > ti.alpha_f + TERMINAL_TOL:
                    if retried:
                        status = INFEASIBLE
                        break
                    retried = True
                    xs[-1] *= np.sqrt(ti.alpha_f * (1.0 - 1e-6) / V_N)
                    working = None
                    continue
                status = OPTIMAL
                break

            # smallest l1 penalty for which the step descends the merit
            slope, curvature = self._objective_model(xs, us, du, dx)
            reduction = infeasibility - self._linearized_violation(qp, du)
            if reduction > 0.0:
                needed = (slope + curvature) / (0.5 * reduction)
                if needed > penalty:
                    penalty = 1.1 * needed
            if sigma > SLACK_TOL:
                penalty = max(penalty, self.elastic_penalty)
            descent = min(slope - penalty * max(reduction, 0.0), 0.0)
            merit0 = self._merit(xs, us, penalty)
            roundoff = MERIT_ROUNDOFF * abs(merit0) + penalty * self._defect_noise
            t = 1.0
            accepted = False
            for _ in range(LINE_SEARCH_STEPS):
                xs_t = xs.copy()
                xs_t[1:] += t * dx
                us_t = us + t * du
                merit_t = self._merit(xs_t, us_t, penalty)
                if merit_t <= merit0 + ARMIJO * t * descent + roundoff:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                logger.debug(f"Line search stalled in SQP iteration {it}")
                defect_norm, violation = self._primal_residuals(xs, us)
                feasible = defect_norm <= DEFECT_TOL and violation <= CONSTRAINT_TOL
                kkt = max(optimality, defect_norm, violation)
                status = self._verdict(sigma, feasible, kkt)
                break
            xs, us = xs_t, us_t

        defect_norm, violation = self._primal_residuals(xs, us)
        feasible = defect_norm <= DEFECT_TOL and violation <= CONSTRAINT_TOL
        kkt = max(optimality, defect_norm, violation)
        if not status:
            status = self._verdict(sigma, feasible, kkt)
        elif status == OPTIMAL and not feasible:
            status = MAXITER
        sol = OCPSolution(
            inputs=us,
            states=xs,
            cost=self.cost(xs, us),
            status=status,
            iterations=it,
            kkt_residual=kkt,
            slack=sigma,
            active_set=tuple(working or ()),
        )
        logger.debug(
            f"SQP x0=({x0[0]:.4g}, {x0[1]:.4g}): {status} after {it} iterations, "
            f"cost={sol.cost:.6g}, kkt={kkt:.2e}, slack={sigma:.2e}, "
            f"penalty={penalty:.2e}"
        )
        return sol

    def pi_mpc(self, x0: ArrayLike, warm: Optional[OCPSolution] = None) -> float:
        """
        First optimal input u*(0|t).

        Raises:
            OCPInfeasible if the problem is not solved to optimality at x0.
        """
        sol = self.solve(x0, warm=warm)
        if not sol.optimal:
            raise OCPInfeasible(
                f"No optimal solution at x0={np.asarray(x0).tolist()}: {sol.status}"
            )
        return float(sol.inputs[0])

    def is_feasible(self, x0: ArrayLike, warm: Optional[OCPSolution] = None) -> bool:
        return self.solve(x0, warm=warm).optimal
