from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.learning.network import NetworkParams, infer
from ampc.mpc.design import RMPCDesign
from ampc.mpc.model import jacobians
from ampc.mpc.riccati import dlqr
from ampc.utils.logger import get_logger

logger = get_logger(__name__)


class SaturatedLinearController:
    """u = clamp(K x, [u_lo, u_hi])."""

    def __init__(
        self, K: ArrayLike, u_lo: float, u_hi: float, tag: str = "lqr"
    ) -> None:
        self.K = np.asarray(K, dtype=float).reshape(2)
        self.u_lo = float(u_lo)
        self.u_hi = float(u_hi)
        self.tag = tag

    def __call__(self, x: NDArray[np.float64]) -> float:
        return float(np.clip(self.K @ np.asarray(x, dtype=float), self.u_lo, self.u_hi))


def lqr_controller(
    design: RMPCDesign,
    Q: Optional[ArrayLike] = None,
    R: Optional[float] = None,
    tag: str = "lqr",
) -> SaturatedLinearController:
    """
    LQR on the linearization at the origin, saturated to U. Without Q and R the
    stage weights of the plant are used, giving the terminal gain K_f.
    """
    plant = design.plant
    A, B = jacobians(plant, np.zeros(2), 0.0)
    Q = plant.Q if Q is None else np.asarray(Q, dtype=float)
    R = plant.R if R is None else float(R)
    K, _ = dlqr(A, B, Q, R)
    u_lo, u_hi = design.U.box_bounds()
    return SaturatedLinearController(K[0], float(u_lo[0]), float(u_hi[0]), tag=tag)


class AMPCController:
    """Network feedback clamped to U; clamping only acts as a safety net."""

    def __init__(
        self, params: NetworkParams, design: RMPCDesign, tag: str = "ampc"
    ) -> None:
        self.params = params
        u_lo, u_hi = design.U.box_bounds()
        self.u_lo = float(u_lo[0])
        self.u_hi = float(u_hi[0])
        self.tag = tag
        self.clamped = 0

    def __call__(self, x: NDArray[np.float64]) -> float:
        u = float(infer(self.params, x))
        if u < self.u_lo or u > self.u_hi:
            self.clamped += 1
            logger.warning(
                f"Network input {u:.4g} at x={np.asarray(x).tolist()} clamped to U"
            )
            u = min(max(u, self.u_lo), self.u_hi)
        return u


class ZeroController:
    tag = "zero"

    def __call__(self, x: NDArray[np.float64]) -> float:
        return 0.0
