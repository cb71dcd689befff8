from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Relative slack when checking that a grid step divides an interval.
GRID_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Polytope:
    """
    Halfspace set {x : normals @ x <= offsets}.

    Sets containing the origin are stored normalized to offsets of one, so
    scaling the set by a factor is a multiply on the offsets.
    """

    normals: NDArray[np.float64]
    offsets: NDArray[np.float64]

    def __post_init__(self) -> None:
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float)).copy()
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1).copy()
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError(
                f"normals have {normals.shape[0]} rows but offsets {offsets.shape[0]}"
            )
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise ValueError("Polytope data must be finite")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def box(cls, lower: ArrayLike, upper: ArrayLike) -> Polytope:
        """
        Axis-aligned box with the origin in its interior, normalized to offsets of one.
        """
        lo = np.asarray(lower, dtype=float).reshape(-1)
        hi = np.asarray(upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo >= 0.0) or np.any(hi <= 0.0):
            raise ValueError(
                f"Box [{lo}, {hi}] must contain the origin in its interior"
            )
        n = lo.size
        eye = np.eye(n)
        normals = np.vstack([eye / hi[:, None], -eye / (-lo[:, None])])
        return cls(normals=normals, offsets=np.ones(2 * n))

    @property
    def dim(self) -> int:
        return int(self.normals.shape[1])

    @property
    def inf_norm(self) -> float:
        """Induced infinity norm of the normal matrix (max absolute row sum)."""
        return float(np.max(np.sum(np.abs(self.normals), axis=1)))

    def scaled(self, factor: float) -> Polytope:
        """The set factor * P (offsets scaled; the origin must be interior)."""
        if factor < 0.0:
            raise ValueError(f"Scaling factor must be non-negative, got {factor}")
        return Polytope(normals=self.normals, offsets=self.offsets * factor)

    def slack(self, x: ArrayLike) -> NDArray[np.float64]:
        """Per-row slack offsets - normals @ x (vectorized over leading axes)."""
        pts = np.asarray(x, dtype=float)
        if self.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        return self.offsets - pts @ self.normals.T

    def contains(self, x: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_] | bool:
        result = np.all(self.slack(x) >= -tol, axis=-1)
        if np.ndim(result) == 0:
            return bool(result)
        return result

    def box_bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """
        Lower and upper coordinate bounds for an axis-aligned polytope.

        Raises:
            ValueError if a row couples coordinates or a direction is unbounded.
        """
        n = self.dim
        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
        for row, off in zip(self.normals, self.offsets):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                raise ValueError("box_bounds requires axis-aligned halfspaces")
            i = int(nz[0])
            bound = off / row[i]
            if row[i] > 0:
                upper[i] = min(upper[i], bound)
            else:
                lower[i] = max(lower[i], bound)
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("Polytope is unbounded in some coordinate direction")
        return lower, upper

    def vertices(self) -> NDArray[np.float64]:
        """Corners of an axis-aligned polytope, shape (2**n, n)."""
        lower, upper = self.box_bounds()
        return np.array(list(itertools.product(*zip(lower, upper))), dtype=float)

    def is_empty(self) -> bool:
        try:
            lower, upper = self.box_bounds()
        except ValueError:
            return False
        return bool(np.any(lower > upper))


def grid_axis(lower: float, upper: float, step: float) -> NDArray[np.float64]:
    """
    Uniform grid on [lower, upper] including both endpoints.

    Raises:
        ValueError if step is not positive, exceeds the interval length or does
            not divide it.
    """
    if not step > 0.0:
        raise ValueError(f"Grid step must be positive, got {step}")
    span = upper - lower
    if step > span:
        raise ValueError(
            f"Grid step {step} exceeds the set diameter {span}: empty grid"
        )
    intervals = span / step
    count = int(round(intervals))
    if abs(intervals - count) > GRID_TOL * max(1.0, intervals):
        raise ValueError(
            f"Grid step {step} does not divide the interval length {span}"
        )
    count += 1
    return np.linspace(lower, upper, count)


def box_grid(lower: ArrayLike, upper: ArrayLike, step: float) -> NDArray[np.float64]:
    """All points of a 2-D uniform grid, x2 outer and x1 inner, shape (m, 2)."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    ax1 = grid_axis(float(lo[0]), float(hi[0]), step)
    ax2 = grid_axis(float(lo[1]), float(hi[1]), step)
    g2, g1 = np.meshgrid(ax2, ax1, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])
