import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_discrete_lyapunov

from ampc.errors import DesignInfeasible
from ampc.utils.logger import get_logger

logger = get_logger(__name__)


def _as_matrices(
    A: ArrayLike, B: ArrayLike, Q: ArrayLike, R: ArrayLike
) -> tuple[NDArray[np.float64], ...]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float)).reshape(B.shape[1], B.shape[1])
    return A, B, Q, R


def solve_dare(
    A: ArrayLike,
    B: ArrayLike,
    Q: ArrayLike,
    R: ArrayLike,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> NDArray[np.float64]:
    """
    Discrete-time algebraic Riccati equation by fixed-point iteration from P = Q.

    Raises:
        DesignInfeasible if the iteration does not converge (pair not stabilizable).
    """
    A, B, Q, R = _as_matrices(A, B, Q, R)
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = A.T @ P @ A - A.T @ P @ B @ gain + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        change = np.max(np.abs(P_next - P))
        P = P_next
        if change <= tol * max(1.0, float(np.max(np.abs(P)))):
            logger.debug(f"Riccati iteration converged after {it} steps")
            return P
    raise DesignInfeasible(
        f"Riccati iteration did not converge within {max_iter} steps; "
        "linearization may not be stabilizable"
    )


def lqr_gain(
    A: ArrayLike, B: ArrayLike, R: ArrayLike, P: ArrayLike
) -> NDArray[np.float64]:
    """K = -(R + B'PB)^{-1} B'PA, so that u = K x."""
    A, B, P, R = _as_matrices(A, B, P, R)
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def riccati_residual(
    A: ArrayLike, B: ArrayLike, Q: ArrayLike, R: ArrayLike, P: ArrayLike
) -> float:
    A, B, Q, R = _as_matrices(A, B, Q, R)
    P = np.asarray(P, dtype=float)
    BtP = B.T @ P
    res = A.T @ P @ A - P - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A) + Q
    return float(np.max(np.abs(res)))


def dlqr(
    A: ArrayLike, B: ArrayLike, Q: ArrayLike, R: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Infinite-horizon discrete LQR: returns (K, P) with u = K x."""
    P = solve_dare(A, B, Q, R)
    return lqr_gain(A, B, R, P), P


def closed_loop_weight(
    A: ArrayLike,
    B: ArrayLike,
    K: ArrayLike,
    Q: ArrayLike,
    R: ArrayLike,
    margin: float = 0.0,
) -> NDArray[np.float64]:
    """
    P with A_K'PA_K - P = -((1 + margin) Q + K'RK), A_K = A + BK. For the LQR
    gain and margin 0 this is the Riccati solution.

    Raises:
        DesignInfeasible if A + BK is not Schur stable.
    """
    A, B, Q, R = _as_matrices(A, B, Q, R)
    K = np.asarray(K, dtype=float).reshape(B.shape[1], A.shape[0])
    A_K = A + B @ K
    radius = float(np.max(np.abs(np.linalg.eigvals(A_K))))
    if radius >= 1.0:
        raise DesignInfeasible(
            f"Closed loop A + BK has spectral radius {radius:.6g} >= 1"
        )
    P = solve_discrete_lyapunov(A_K.T, (1.0 + margin) * Q + K.T @ R @ K)
    return 0.5 * (P + P.T)
