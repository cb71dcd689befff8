"""
Dense primal active-set solver for strictly convex inequality-constrained QPs

    min 0.5 z'Hz + g'z   s.t.   A z <= b.

Equality-constrained subproblems are solved in range-space form through one
Cholesky factorization of H per call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ampc.utils.logger import get_logger

logger = get_logger(__name__)

QP_OPTIMAL = "optimal"
QP_MAXITER = "maxiter"


@dataclass(frozen=True)
class QPResult:
    z: NDArray[np.float64]
    multipliers: NDArray[np.float64]
    active: tuple[int, ...]
    iterations: int
    status: str

    @property
    def optimal(self) -> bool:
        return self.status == QP_OPTIMAL


class ActiveSetQP:
    """
    One QP instance. `solve` accepts a feasible starting point and an optional
    guessed working set; the guess is tried first by a single equality solve and
    only kept when it is primal and dual feasible.
    """

    def __init__(
        self,
        H: NDArray[np.float64],
        g: NDArray[np.float64],
        A: NDArray[np.float64],
        b: NDArray[np.float64],
        tol: float = 1e-10,
    ) -> None:
        self.H = np.asarray(H, dtype=float)
        self.g = np.asarray(g, dtype=float)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float)
        self.tol = tol
        n = self.g.size
        if (
            self.H.shape != (n, n)
            or self.A.shape[1] != n
            or self.A.shape[0] != self.b.size
        ):
            raise ValueError(
                f"Inconsistent QP dimensions: H {self.H.shape}, g {n}, "
                f"A {self.A.shape}, b {self.b.size}"
            )
        try:
            self._chol = cho_factor(self.H)
        except LinAlgError as exc:
            raise ValueError("QP Hessian must be positive definite") from exc
        self._scale = np.maximum(np.linalg.norm(self.A, axis=1), 1.0)

    @property
    def n(self) -> int:
        return int(self.g.size)

    @property
    def m(self) -> int:
        return int(self.b.size)

    def _equality_step(
        self, z: NDArray[np.float64], working: list[int]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """
        Step p and multipliers lam of min 0.5 p'Hp + (Hz+g)'p s.t. A_W p = 0.
        """
        grad = self.H @ z + self.g
        Hinv_grad = cho_solve(self._chol, grad)
        if not working:
            return -Hinv_grad, np.zeros(0)
        A_w = self.A[working]
        Hinv_At = cho_solve(self._chol, A_w.T)
        schur = A_w @ Hinv_At
        rhs = -A_w @ Hinv_grad
        try:
            lam = np.linalg.solve(schur, rhs)
        except np.linalg.LinAlgError:
            lam = np.linalg.lstsq(schur, rhs, rcond=None)[0]
        p = -Hinv_grad - Hinv_At @ lam
        return p, lam

    def _violation(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        return (self.A @ z - self.b) / self._scale

    def _try_guess(self, working: Sequence[int]) -> Optional[QPResult]:
        W = sorted(set(int(i) for i in working if 0 <= i < self.m))
        if not W:
            return None
        # minimizer on the affine set A_W z = b_W, from an arbitrary z
        z0 = np.zeros(self.n)
        p, lam = self._equality_step(z0, W)
        A_w = self.A[W]
        residual = self.b[W] - A_w @ p
        Hinv_At = cho_solve(self._chol, A_w.T)
        try:
            corr = np.linalg.solve(A_w @ Hinv_At, residual)
        except np.linalg.LinAlgError:
            return None
        z = p + Hinv_At @ corr
        lam = lam - corr
        feas_tol = max(self.tol, 1e-9)
        if np.any(self._violation(z) > feas_tol) or np.any(lam < -feas_tol):
            return None
        multipliers = np.zeros(self.m)
        multipliers[W] = lam
        return QPResult(
            z=z,
            multipliers=multipliers,
            active=tuple(W),
            iterations=1,
            status=QP_OPTIMAL,
        )

    def solve(
        self,
        z0: NDArray[np.float64],
        working: Optional[Sequence[int]] = None,
        max_iter: Optional[int] = None,
    ) -> QPResult:
        """
        Args:
            z0: feasible starting point (A z0 <= b).
            working: guessed active set, e.g. from the previous subproblem.
        """
        if working is not None:
            guessed = self._try_guess(working)
            if guessed is not None:
                return guessed

        z = np.asarray(z0, dtype=float).copy()
        if np.any(self._violation(z) > 1e-8):
            raise ValueError("Active-set start point is infeasible")
        limit = max_iter if max_iter is not None else 10 * (self.n + self.m)
        W: list[int] = []
        lam = np.zeros(0)
        # after an unblocked full step the iterate minimizes on the working set
        stationary = False

        for it in range(1, limit + 1):
            p, lam = self._equality_step(z, W)
            scale = max(1.0, np.max(np.abs(z)))
            small = np.max(np.abs(p), initial=0.0) <= self.tol * scale
            if stationary or small:
                lam_scale = max(1.0, np.max(np.abs(lam), initial=0.0))
                if lam.size == 0 or np.min(lam) >= -self.tol * lam_scale:
                    multipliers = np.zeros(self.m)
                    multipliers[W] = lam
                    return QPResult(
                        z=z,
                        multipliers=multipliers,
                        active=tuple(sorted(W)),
                        iterations=it,
                        status=QP_OPTIMAL,
                    )
                W.pop(int(np.argmin(lam)))
                stationary = False
                continue

            Ap = self.A @ p
            slack = self.b - self.A @ z
            candidates = Ap > self.tol * self._scale
            if W:
                candidates[W] = False
            step = 1.0
            blocking = -1
            if np.any(candidates):
                idx = np.flatnonzero(candidates)
                ratios = np.maximum(slack[idx], 0.0) / Ap[idx]
                k = int(np.argmin(ratios))
                if ratios[k] < 1.0:
                    step = float(ratios[k])
                    blocking = int(idx[k])
            z = z + step * p
            if blocking >= 0:
                W.append(blocking)
            stationary = blocking < 0

        logger.debug(f"Active-set QP hit the iteration limit ({limit})")
        multipliers = np.zeros(self.m)
        if W:
            multipliers[W] = lam if lam.size == len(W) else 0.0
        return QPResult(
            z=z,
            multipliers=multipliers,
            active=tuple(sorted(W)),
            iterations=limit,
            status=QP_MAXITER,
        )


def solve_qp(
    H: NDArray[np.float64],
    g: NDArray[np.float64],
    A: NDArray[np.float64],
    b: NDArray[np.float64],
    z0: NDArray[np.float64],
    working: Optional[Sequence[int]] = None,
    tol: float = 1e-10,
) -> QPResult:
    return ActiveSetQP(H, g, A, b, tol=tol).solve(z0, working=working)
