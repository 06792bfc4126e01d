"""
Kernel weights, evaluation grids and local-constant averages.

Everything here is a pure function of its inputs. Curves are stored as
``(N, k)`` arrays on an ascending grid and evaluated elsewhere by
piecewise-linear interpolation with endpoint clamping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGridError,
    EmptyDataError,
    InvalidBandwidthError,
    ShapeError,
    StarvedNeighborhoodError,
)

__all__ = [
    "Kernel",
    "Grid",
    "CurveSet",
    "kernel_weight",
    "kernel_matrix",
    "build_grid",
    "interpolate",
    "interpolate_columns",
    "interpolation_slopes",
    "weighted_local_average",
    "DEFAULT_GRID_N",
]

DEFAULT_GRID_N = 100
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Kernel(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self is Kernel.GAUSSIAN:
            return np.exp(-0.5 * u * u) / _SQRT_2PI
        return 0.75 * np.maximum(0.0, 1.0 - u * u)


def _check_bandwidth(h):
    h = float(h)
    if not np.isfinite(h) or h <= 0:
        raise InvalidBandwidthError(f"bandwidth must be positive and finite, got {h!r}")
    return h


def kernel_weight(u, h, kernel=Kernel.GAUSSIAN):
    """Scaled kernel ``K(u / h) / h``; vectorised over ``u``."""
    h = _check_bandwidth(h)
    return Kernel(kernel)(np.asarray(u, dtype=float) / h) / h


def kernel_matrix(points, centers, h, kernel=Kernel.GAUSSIAN):
    """Weights ``K_h(centers[i] - points[t])`` as an ``(len(points), len(centers))`` array."""
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    return kernel_weight(centers[None, :] - points[:, None], h, kernel)


@dataclass(frozen=True)
class Grid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ShapeError("a grid needs at least two points")
        if not np.all(np.isfinite(pts)) or not np.all(np.diff(pts) > 0):
            raise ShapeError("grid points must be finite and strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def N(self):
        return self.points.size

    def __len__(self):
        return self.points.size

    def mirrored(self):
        """Grid for the negated index, ``-u`` in ascending order."""
        return Grid(-self.points[::-1])


def build_grid(index_values, N=DEFAULT_GRID_N):
    """N equally spaced points spanning the range of ``index_values``."""
    z = np.asarray(index_values, dtype=float).ravel()
    if z.size == 0:
        raise EmptyDataError("cannot build a grid from no index values")
    if N < 2:
        raise ShapeError(f"grid size must be at least 2, got {N}")
    lo, hi = float(z.min()), float(z.max())
    if not hi > lo:
        raise DegenerateGridError(f"index values have zero range ({lo})")
    return Grid(np.linspace(lo, hi, int(N)))


def interpolate(grid, values, query):
    """Piecewise-linear interpolation of ``values`` on ``grid``, clamped outside it."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.N,):
        raise ShapeError(f"expected {grid.N} values, got shape {values.shape}")
    out = np.interp(query, grid.points, values)
    return float(out) if np.ndim(out) == 0 else out


def interpolate_columns(grid, table, query):
    """Interpolate every column of an ``(N, k)`` table at ``query``; returns ``(len(query), k)``."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != grid.N:
        raise ShapeError(f"expected a ({grid.N}, k) table, got shape {table.shape}")
    idx, frac = _locate(grid, query)
    lower = table[idx]
    return lower + frac[:, None] * (table[idx + 1] - lower)


def _locate(grid, query):
    # segment index and position within it, clamped to the grid
    pts = grid.points
    q = np.clip(np.asarray(query, dtype=float).ravel(), pts[0], pts[-1])
    idx = np.clip(np.searchsorted(pts, q, side="right") - 1, 0, grid.N - 2)
    return idx, (q - pts[idx]) / (pts[idx + 1] - pts[idx])


def interpolation_slopes(grid, table, query):
    """Derivative of the clamped interpolant of each column at ``query``.

    Zero outside the grid (the clamped pieces are flat); at a node the
    slope of the segment to its right is used.
    """
    table = np.asarray(table, dtype=float)
    query = np.asarray(query, dtype=float).ravel()
    pts = grid.points
    slopes = np.diff(table, axis=0) / np.diff(pts)[:, None]
    idx = np.clip(np.searchsorted(pts, query, side="right") - 1, 0, grid.N - 2)
    out = slopes[idx]
    outside = (query < pts[0]) | (query > pts[-1])
    out[outside] = 0.0
    return out


def weighted_local_average(centers, values, weights, z, h, kernel=Kernel.GAUSSIAN):
    """Local-constant estimate ``sum w v K_h(c - z) / sum w K_h(c - z)``."""
    centers = np.asarray(centers, dtype=float)
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (centers.shape == values.shape == weights.shape):
        raise ShapeError("centers, values and weights must have equal shapes")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    kw = weights * kernel_weight(centers - z, h, kernel)
    mass = kw.sum()
    if not mass > 0:
        raise StarvedNeighborhoodError(f"no kernel mass at z={z}", grid_point=z)
    return float(kw @ values / mass)


@dataclass
class CurveSet:
    """Component curves on a grid.

    ``proportions``, ``means`` and ``variances`` are ``(N, k)`` arrays.
    MRSIP fits only populate ``proportions``; the other two are ``None``.
    """

    grid: Grid
    proportions: np.ndarray
    means: np.ndarray | None = None
    variances: np.ndarray | None = None

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=float)
        for name in ("proportions", "means", "variances"):
            arr = getattr(self, name)
            if arr is not None and (arr.ndim != 2 or arr.shape[0] != self.grid.N):
                raise ShapeError(f"{name} must be ({self.grid.N}, k), got {arr.shape}")

    @property
    def k(self):
        return self.proportions.shape[1]

    def at(self, query):
        """Interpolated ``(pi, m, sigma2)`` at ``query``; missing slots come back as ``None``."""
        idx, frac = _locate(self.grid, query)
        out = []
        for arr in (self.proportions, self.means, self.variances):
            if arr is None:
                out.append(None)
            else:
                lower = arr[idx]
                out.append(lower + frac[:, None] * (arr[idx + 1] - lower))
        return tuple(out)

    def mirrored(self):
        """The same curves expressed as functions of the negated index."""
        flip = lambda a: None if a is None else a[::-1].copy()
        return CurveSet(self.grid.mirrored(), flip(self.proportions),
                        flip(self.means), flip(self.variances))

    def permuted(self, perm):
        perm = list(perm)
        pick = lambda a: None if a is None else a[:, perm]
        return CurveSet(self.grid, pick(self.proportions), pick(self.means),
                        pick(self.variances))

    def max_abs_change(self, other):
        diffs = [np.max(np.abs(a - b)) for a, b in
                 ((self.proportions, other.proportions), (self.means, other.means),
                  (self.variances, other.variances)) if a is not None and b is not None]
        return float(max(diffs))
