"""Sliced inverse regression for the leading index direction."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateIndexError, RankDeficiencyError, ShapeError, SlicingError

__all__ = ["normalize_index", "sir_direction", "sir_from_labels", "index_angle"]

_ZERO_TOL = 1e-12
_EIG_FLOOR = 1e-10


def normalize_index(raw):
    """Scale to unit norm and make the first non-negligible entry positive."""
    v = np.asarray(raw, dtype=float).ravel()
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm <= _ZERO_TOL:
        raise DegenerateIndexError("index vector has (near) zero norm")
    v = v / norm
    lead = np.flatnonzero(np.abs(v) > _ZERO_TOL)
    if v[lead[0]] < 0:
        v = -v
    return v


def index_angle(a, b):
    """Angle in radians between two index directions, ignoring sign."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(min(1.0, c)))


def _inverse_sqrt_cov(X):
    cov = np.cov(X, rowvar=False, bias=True)
    cov = np.atleast_2d(cov)
    evals, evecs = np.linalg.eigh(cov)
    top = evals[-1]
    if top <= 0 or evals[0] < _EIG_FLOOR * top:
        raise RankDeficiencyError("sample covariance of X is (numerically) singular")
    return (evecs / np.sqrt(evals)) @ evecs.T


def _sir_from_groups(X, groups):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    root_inv = _inverse_sqrt_cov(X)
    Z = (X - X.mean(axis=0)) @ root_inv
    M = np.zeros((X.shape[1], X.shape[1]))
    for idx in groups:
        m = Z[idx].mean(axis=0)
        M += (len(idx) / n) * np.outer(m, m)
    _, evecs = np.linalg.eigh(M)
    return normalize_index(root_inv @ evecs[:, -1])


def sir_direction(X, y, n_slices=10):
    """Leading SIR direction, slicing on the order of ``y``.

    Ties in ``y`` keep observation order, so the result is deterministic.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError("X must be (n, p) with n matching len(y)")
    n, p = X.shape
    if n_slices < 2:
        raise SlicingError("need at least two slices")
    if n < n_slices:
        raise SlicingError(f"{n} observations cannot fill {n_slices} slices")
    if n <= p:
        raise RankDeficiencyError(f"need n > p, got n={n}, p={p}")
    order = np.argsort(y, kind="stable")
    return _sir_from_groups(X, np.array_split(order, n_slices))


def sir_from_labels(X, labels, k):
    """SIR with slices given by component labels ``0..k-1`` (e.g. a hard clustering)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).ravel()
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ShapeError("X must be (n, p) with n matching len(labels)")
    if k < 2:
        raise SlicingError("need at least two label groups")
    groups = [np.flatnonzero(labels == j) for j in range(k)]
    empty = [j for j, g in enumerate(groups) if g.size == 0]
    if empty:
        raise SlicingError(f"label groups {empty} are empty")
    if np.any((labels < 0) | (labels >= k)):
        raise SlicingError(f"labels must lie in 0..{k - 1}")
    if X.shape[0] <= X.shape[1]:
        raise RankDeficiencyError("need n > p")
    return _sir_from_groups(X, groups)
