"""
Continuous stirred tank reactor, Euler-discretized, in shifted coordinates.

States and inputs are carried as deviations x = x~ - x_e, u = u~ - u_e from the
steady state. The map is shifted by its own steady-state value so that the
origin is an exact fixed point even though x_e is only known to four digits.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ampc.errors import DesignInfeasible
from ampc.mpc.polytope import Polytope, box_grid
from ampc.utils.logger import get_logger

logger = get_logger(__name__)

# State box half-width and coolant range in original coordinates.
STATE_BOUND = 0.2
COOLANT_RANGE = (0.0, 2.0)
STEADY_RESIDUAL_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class PlantConfig:
    theta: float = 20.0
    k_rate: float = 300.0
    M: float = 5.0
    x_f: float = 0.3947
    x_c: float = 0.3816
    alpha: float = 0.117
    h: float = 0.1
    x_e: NDArray[np.float64] = None  # type: ignore[assignment]
    u_e: float = 0.7853
    Q: NDArray[np.float64] = None  # type: ignore[assignment]
    R: float = 1e-4
    N: int = 180

    def __post_init__(self) -> None:
        x_e = np.array([0.2632, 0.6519]) if self.x_e is None else self.x_e
        Q = np.eye(2) if self.Q is None else self.Q
        x_e = np.asarray(x_e, dtype=float).reshape(2).copy()
        Q = np.asarray(Q, dtype=float).reshape(2, 2).copy()
        x_e.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "x_e", x_e)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "N", int(self.N))
        self.validate()
        offset = _euler_map(self, self.x_e, np.asarray(self.u_e))
        offset.setflags(write=False)
        object.__setattr__(self, "_offset", offset)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> PlantConfig:
        return cls(
            theta=float(cfg["theta"]),
            k_rate=float(cfg["k_rate"]),
            M=float(cfg["M"]),
            x_f=float(cfg["x_f"]),
            x_c=float(cfg["x_c"]),
            alpha=float(cfg["alpha"]),
            h=float(cfg["h"]),
            x_e=np.array([float(cfg["x_e1"]), float(cfg["x_e2"])]),
            u_e=float(cfg["u_e"]),
            Q=np.diag([float(cfg["q11"]), float(cfg["q22"])]),
            R=float(cfg["r"]),
            N=int(cfg["n_horizon"]),
        )

    def validate(self) -> None:
        """
        Raises:
            ValueError if a reactor parameter is not positive, Q is not symmetric
            positive definite, R <= 0 or N < 1.
        """
        for name in ("theta", "k_rate", "M", "x_f", "x_c", "alpha", "h"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(
                    f"Plant parameter '{name}' must be positive, got {value}"
                )
        if not np.all(np.isfinite(self.x_e)) or self.x_e[1] <= 0.0:
            raise ValueError(
                f"Steady state x_e must be finite with x_e2 > 0, got {self.x_e}"
            )
        if not np.allclose(self.Q, self.Q.T):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(self.Q)) <= 0.0:
            raise ValueError("Q must be positive definite")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.N < 1:
            raise ValueError(f"Horizon N must be at least 1, got {self.N}")

    @property
    def offset(self) -> NDArray[np.float64]:
        """Value of the original map at the steady state, F(x_e, u_e)."""
        return self._offset  # type: ignore[attr-defined,no-any-return]

    def steady_residual(self) -> float:
        """Norm of F(x_e, u_e) - x_e; nonzero only through rounding of x_e."""
        return float(np.linalg.norm(self.offset - self.x_e))


@dataclass(frozen=True)
class StabilizabilityConstants:
    """
    Incremental stabilizability constants, the input Lipschitz constant and the
    input-disturbance bound. Their synthesis happens elsewhere; here they are
    validated configuration.
    """

    c_delta_l: float = 12.33
    c_delta_u: float = 199.03
    k_max: float = 45.72
    rho: float = 0.9913
    delta_loc: float = 0.01
    lipschitz: float = 5.5e-3
    eta: float = 5.1e-3

    def __post_init__(self) -> None:
        self.validate()

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> StabilizabilityConstants:
        return cls(
            c_delta_l=float(cfg["c_delta_l"]),
            c_delta_u=float(cfg["c_delta_u"]),
            k_max=float(cfg["k_max"]),
            rho=float(cfg["rho"]),
            delta_loc=float(cfg["delta_loc"]),
            lipschitz=float(cfg["lambda"]),
            eta=float(cfg["eta"]),
        )

    def validate(self) -> None:
        for name in ("c_delta_l", "c_delta_u", "k_max", "delta_loc", "lipschitz"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"'{name}' must be positive, got {value}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.c_delta_l > self.c_delta_u:
            raise ValueError(
                f"c_delta_l ({self.c_delta_l}) must not exceed c_delta_u ({self.c_delta_u})"
            )
        if not (np.isfinite(self.eta) and self.eta >= 0.0):
            raise ValueError(f"eta must be non-negative, got {self.eta}")

    def eta_max(self) -> float:
        """Largest admissible disturbance, (1/lambda) * sqrt(delta_loc / c_delta_u)."""
        return float(np.sqrt(self.delta_loc / self.c_delta_u) / self.lipschitz)

    def check_disturbance_bound(self) -> None:
        """
        Raises:
            DesignInfeasible if eta exceeds eta_max.
        """
        bound = self.eta_max()
        if self.eta > bound:
            raise DesignInfeasible(
                f"Input disturbance bound eta={self.eta} exceeds the admissible {bound:.6g}"
            )

    def with_eta(self, eta: float) -> StabilizabilityConstants:
        return replace(self, eta=eta)


def _euler_map(
    plant: PlantConfig, xt: NDArray[np.float64], ut: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Euler step of the reactor in original coordinates (vectorized)."""
    x1 = xt[..., 0]
    x2 = xt[..., 1]
    rate = plant.k_rate * x1 * np.exp(-plant.M / x2)
    f1 = x1 + plant.h * ((1.0 - x1) / plant.theta - rate)
    f2 = x2 + plant.h * (
        (plant.x_f - x2) / plant.theta + rate - plant.alpha * ut * (x2 - plant.x_c)
    )
    return np.stack([f1, f2], axis=-1)


def _as_state_input(
    x: ArrayLike, u: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    xs = np.asarray(x, dtype=float)
    us = np.asarray(u, dtype=float)
    if xs.shape[-1:] != (2,):
        raise ValueError(f"State must have trailing dimension 2, got shape {xs.shape}")
    if us.shape == (1,) and xs.ndim == 1:
        us = us.reshape(())
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
        raise ValueError("step/jacobians require finite state and input")
    return xs, us


def step(plant: PlantConfig, x: ArrayLike, u: ArrayLike) -> NDArray[np.float64]:
    """
    Transformed dynamics f(x, u); vectorized over leading axes of x and u.

    Raises:
        ValueError on non-finite input.
    """
    xs, us = _as_state_input(x, u)
    return _euler_map(plant, xs + plant.x_e, us + plant.u_e) - plant.offset


def jacobians(
    plant: PlantConfig, x: ArrayLike, u: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Analytic partial derivatives of `step`: A of shape (..., 2, 2) and B of
    shape (..., 2, 1).
    """
    xs, us = _as_state_input(x, u)
    x1 = xs[..., 0] + plant.x_e[0]
    x2 = xs[..., 1] + plant.x_e[1]
    ut = us + plant.u_e
    expo = np.exp(-plant.M / x2)
    k_e = plant.k_rate * expo
    # d/dx2 of k * x1 * exp(-M/x2)
    d_rate_dx2 = k_e * x1 * plant.M / x2**2
    h = plant.h
    shape = np.broadcast(x1, ut).shape
    A = np.empty(shape + (2, 2))
    A[..., 0, 0] = 1.0 + h * (-1.0 / plant.theta - k_e)
    A[..., 0, 1] = -h * d_rate_dx2
    A[..., 1, 0] = h * k_e
    A[..., 1, 1] = 1.0 + h * (-1.0 / plant.theta + d_rate_dx2 - plant.alpha * ut)
    B = np.zeros(shape + (2, 1))
    B[..., 1, 0] = -h * plant.alpha * (x2 - plant.x_c)
    return A, B


def lipschitz_over(plant: PlantConfig, states: ArrayLike) -> float:
    """
    max ||B(x)|| over the given states. The map is affine in u, so the induced
    norm from the (scalar) input to the state is the Euclidean norm of B.
    """
    pts = np.atleast_2d(np.asarray(states, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("Lipschitz estimate over an empty set of states")
    _, B = jacobians(plant, pts, np.zeros(pts.shape[0]))
    return float(np.max(np.linalg.norm(B[..., 0], axis=-1)))


def estimate_lipschitz(
    plant: PlantConfig, X: Polytope, grid_step: float
) -> float:
    """
    Lipschitz constant of f in u over a uniform grid of X (inputs need no grid).

    Raises:
        ValueError if grid_step is not positive, exceeds the set diameter or does
            not divide it.
    """
    lower, upper = X.box_bounds()
    points = box_grid(lower, upper, grid_step)
    lam = lipschitz_over(plant, points)
    logger.debug(f"Lipschitz estimate {lam:.6g} over {len(points)} grid points")
    return lam


def default_polytopes(
    plant: PlantConfig, eta: float
) -> tuple[Polytope, Polytope, Polytope]:
    """
    State box X, input interval U, and the tightened input set U_t = U (-) [-eta, eta].

    Raises:
        DesignInfeasible if eta leaves U_t without the origin in its interior.
    """
    X = Polytope.box([-STATE_BOUND, -STATE_BOUND], [STATE_BOUND, STATE_BOUND])
    u_lo = COOLANT_RANGE[0] - plant.u_e
    u_hi = COOLANT_RANGE[1] - plant.u_e
    U = Polytope.box([u_lo], [u_hi])
    if eta < 0.0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    if u_lo + eta >= 0.0 or u_hi - eta <= 0.0:
        raise DesignInfeasible(
            f"Tightened input set [{u_lo + eta:.6g}, {u_hi - eta:.6g}] is empty "
            f"or excludes the steady input (eta={eta})"
        )
    U_t = Polytope.box([u_lo + eta], [u_hi - eta])
    return X, U, U_t


def to_original(
    plant: PlantConfig, x: ArrayLike, u: ArrayLike | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64] | None]:
    """Shift states (and optionally inputs) back to reactor coordinates."""
    xo = np.asarray(x, dtype=float) + plant.x_e
    uo = None if u is None else np.asarray(u, dtype=float) + plant.u_e
    return xo, uo


def from_original(
    plant: PlantConfig, x: ArrayLike, u: ArrayLike | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64] | None]:
    xs = np.asarray(x, dtype=float) - plant.x_e
    us = None if u is None else np.asarray(u, dtype=float) - plant.u_e
    return xs, us
