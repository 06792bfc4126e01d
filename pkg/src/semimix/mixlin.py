"""
EM for finite mixtures of linear regressions with constant proportions.

This is both the classical baseline and the initializer for the
single-index proportion model.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._stats import add_intercept, as_2d, normal_logpdf, posterior_from_logs
from .errors import ComponentCollapseError, DomainError, ShapeError
from .rng import make_rng

__all__ = [
    "LinearMixtureParams",
    "Prediction",
    "MixLinFit",
    "fit_mixlinreg",
    "loglik_mixlin",
    "predict_mixlin",
    "weighted_least_squares",
    "variance_floor",
    "VarianceFloorWarning",
]

log = logging.getLogger(__name__)

VARIANCE_FLOOR_FACTOR = 1e-8


class VarianceFloorWarning(RuntimeWarning):
    pass


class Prediction(NamedTuple):
    yhat: np.ndarray
    posteriors: np.ndarray
    labels: np.ndarray


@dataclass
class LinearMixtureParams:
    """Per-component coefficients ``(k, q)``, variances ``(k,)`` and proportions ``(k,)``.

    With ``intercept`` set, column 0 of ``coefficients`` is the intercept and
    the raw predictors are prefixed with a column of ones before use.
    """

    coefficients: np.ndarray
    variances: np.ndarray
    proportions: np.ndarray | None = None
    intercept: bool = True

    def __post_init__(self):
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        self.variances = np.asarray(self.variances, dtype=float).ravel()
        if self.proportions is not None:
            self.proportions = np.asarray(self.proportions, dtype=float).ravel()

    @property
    def k(self):
        return self.coefficients.shape[0]

    def design(self, X):
        X = as_2d(X)
        return add_intercept(X) if self.intercept else X

    def component_means(self, X):
        """``(n, k)`` matrix of ``x_i^T beta_j``."""
        D = self.design(X)
        if D.shape[1] != self.coefficients.shape[1]:
            raise ShapeError(f"design has {D.shape[1]} columns, coefficients "
                             f"expect {self.coefficients.shape[1]}")
        return D @ self.coefficients.T

    def permuted(self, perm):
        perm = list(perm)
        return LinearMixtureParams(
            self.coefficients[perm], self.variances[perm],
            None if self.proportions is None else self.proportions[perm],
            self.intercept)


@dataclass
class MixLinFit:
    params: LinearMixtureParams
    posteriors: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def labels(self):
        return np.argmax(self.posteriors, axis=1)


def variance_floor(y):
    return VARIANCE_FLOOR_FACTOR * max(float(np.var(y)), 1e-300)


def weighted_least_squares(D, y, w):
    """Solve ``(D^T W D) b = D^T W y``; raises on a singular weighted Gram matrix."""
    Dw = D * w[:, None]
    gram = D.T @ Dw
    rhs = Dw.T @ y
    # scale to unit diagonal so the pivot test is relative
    d = np.sqrt(np.diag(gram))
    if not np.all(d > 0):
        raise ComponentCollapseError("weighted Gram matrix is singular")
    try:
        chol = np.linalg.cholesky(gram / np.outer(d, d))
    except np.linalg.LinAlgError:
        raise ComponentCollapseError("weighted Gram matrix is singular") from None
    if np.min(np.diag(chol)) ** 2 < 1e-12:
        raise ComponentCollapseError("weighted Gram matrix is singular")
    return np.linalg.solve(gram, rhs)


def _clamp_variances(var, floor):
    low = var < floor
    if np.any(low):
        warnings.warn(f"component variance clamped to floor {floor:.3g}",
                      VarianceFloorWarning, stacklevel=3)
        var = np.where(low, floor, var)
    return var


def _log_joint(params, D, y):
    means = D @ params.coefficients.T
    return np.log(params.proportions)[None, :] + normal_logpdf(
        y[:, None], means, params.variances[None, :])


def loglik_mixlin(params, X, y):
    """Observed-data log-likelihood ``sum_i log sum_j pi_j phi(y_i | x_i^T b_j, s_j^2)``."""
    if np.any(np.asarray(params.variances) <= 0):
        raise DomainError("variances must be positive")
    y = np.asarray(y, dtype=float).ravel()
    D = params.design(X)
    _, row = posterior_from_logs(_log_joint(params, D, y))
    return float(row.sum())


def _mstep(post, D, y, floor, q):
    k = post.shape[1]
    coef = np.empty((k, D.shape[1]))
    var = np.empty(k)
    mass = post.sum(axis=0)
    for j in range(k):
        if mass[j] < q:
            raise ComponentCollapseError(
                f"component {j} has effective weight {mass[j]:.3g} < {q}")
        coef[j] = weighted_least_squares(D, y, post[:, j])
        r = y - D @ coef[j]
        var[j] = post[:, j] @ (r * r) / mass[j]
    var = _clamp_variances(var, floor)
    return coef, var, mass / mass.sum()


def _run_em(D, y, post, max_iter, tol, floor, intercept):
    n, q = D.shape
    trace = []
    prev = -np.inf
    converged = False
    for it in range(1, max_iter + 1):
        coef, var, props = _mstep(post, D, y, floor, q)
        params = LinearMixtureParams(coef, var, props, intercept)
        post, row = posterior_from_logs(_log_joint(params, D, y))
        ll = float(row.sum())
        trace.append(ll)
        if abs(ll - prev) <= tol * abs(ll):
            converged = True
            break
        prev = ll
    return MixLinFit(params, post, ll, it, converged, trace)


def _random_partition(n, k, rng):
    labels = rng.permutation(np.arange(n) % k)
    post = np.zeros((n, k))
    post[np.arange(n), labels] = 1.0
    return post


def fit_mixlinreg(X, y, k, starts=10, max_iter=1000, tol=1e-8, intercept=True,
                  seed=None, init=None):
    """Fit a k-component mixture of linear regressions by EM.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Predictors (without an intercept column).
    y : array_like, shape (n,)
    k : int
    starts : int
        Number of random-partition initializations; the best final
        log-likelihood wins. Ignored when ``init`` is given.
    intercept : bool
        Prepend a column of ones to ``X``.
    seed : int, Generator or None
    init : array_like, shape (n, k), optional
        Initial responsibilities for a single EM run.

    Returns
    -------
    MixLinFit

    Raises
    ------
    ComponentCollapseError
        If every start loses a component.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    D = add_intercept(X) if intercept else X
    n, q = D.shape
    if n != y.size:
        raise ShapeError("X and y have different numbers of rows")
    if k < 1 or n <= k * q:
        raise ShapeError(f"need n > k*q, got n={n}, k={k}, q={q}")
    floor = variance_floor(y)
    if k == 1:
        return _run_em(D, y, np.ones((n, 1)), max_iter, tol, floor, intercept)

    rng = make_rng(seed)
    inits = [np.asarray(init, dtype=float)] if init is not None else \
        [_random_partition(n, k, rng) for _ in range(starts)]
    best, last_err = None, None
    for post0 in inits:
        try:
            fit = _run_em(D, y, post0, max_iter, tol, floor, intercept)
        except ComponentCollapseError as exc:
            last_err = exc
            continue
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise ComponentCollapseError(f"all {len(inits)} starts collapsed: {last_err}")
    return best


def predict_mixlin(params, X_new, y=None):
    """Predictions ``(yhat, posteriors, labels)`` from a fitted linear mixture.

    With ``y`` the responsibilities use the observed responses; without it
    the constant proportions stand in for them.
    """
    means = params.component_means(X_new)
    props = np.full(params.k, 1.0 / params.k) if params.proportions is None \
        else params.proportions
    if y is None:
        post = np.tile(props, (means.shape[0], 1))
    else:
        y = np.asarray(y, dtype=float).ravel()
        post, _ = posterior_from_logs(np.log(props)[None, :] + normal_logpdf(
            y[:, None], means, params.variances[None, :]))
    return Prediction(np.sum(post * means, axis=1), post, np.argmax(post, axis=1))
