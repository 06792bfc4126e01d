"""
Mixture of linear regressions with single-index varying proportions.

Component means ``x^T beta_j`` and variances are global; only the mixing
proportions ``pi_j(alpha^T x)`` are nonparametric. Fitting backfits between
the proportion curves (kernel EM on a grid) and the global parameters
``(alpha, beta, sigma^2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._stats import add_intercept, as_2d, normal_logpdf, posterior_from_logs
from .errors import ShapeError, SlicingError, StarvedNeighborhoodError
from .mixlin import (
    LinearMixtureParams,
    _clamp_variances,
    fit_mixlinreg,
    variance_floor,
    weighted_least_squares,
)
from .mixlin import Prediction
from .msim import ProfileResult, _orient, profile_sphere
from .sir import normalize_index, sir_direction, sir_from_labels
from .smoothing import (
    DEFAULT_GRID_N,
    CurveSet,
    Kernel,
    build_grid,
    interpolate_columns,
    interpolation_slopes,
    kernel_matrix,
)

__all__ = [
    "MrsipFit",
    "PROPORTION_FLOOR",
    "clamp_proportions",
    "estep_mrsip",
    "mstep_pi",
    "update_beta_sigma",
    "index_loglik_mrsip",
    "index_loglik_mrsip_gradient",
    "profile_index_mrsip",
    "fit_mrsip",
    "predict_mrsip",
]

log = logging.getLogger(__name__)

PROPORTION_FLOOR = 1e-6
STARVED_TOL = 1e-12


@dataclass
class MrsipFit:
    index: np.ndarray
    proportion_curves: CurveSet
    linear: LinearMixtureParams
    posteriors: np.ndarray
    loglik: float
    bandwidth: float
    iterations: dict = field(default_factory=dict)
    converged: bool = True
    kernel: str = Kernel.GAUSSIAN.value
    trace: list = field(default_factory=list)

    @property
    def k(self):
        return self.linear.k

    @property
    def labels(self):
        return np.argmax(self.posteriors, axis=1)


def clamp_proportions(pi, floor=PROPORTION_FLOOR):
    """Clip proportions into ``[floor, 1 - floor]`` and renormalise each row."""
    pi = np.clip(np.asarray(pi, dtype=float), floor, 1.0 - floor)
    return pi / pi.sum(axis=1, keepdims=True)


def _log_joint(pi, means, variances, y):
    return np.log(clamp_proportions(pi)) + normal_logpdf(
        y[:, None], means, np.asarray(variances)[None, :])


def estep_mrsip(pi, design, y, linear):
    """Responsibilities ``p_ij`` proportional to ``pi_j(z_i) phi(y_i | x_i^T b_j, s_j^2)``.

    ``pi`` is ``(n, k)``, already evaluated at each observation's index;
    it is floored before use.
    """
    y = np.asarray(y, dtype=float).ravel()
    means = np.asarray(design, dtype=float) @ linear.coefficients.T
    post, _ = posterior_from_logs(_log_joint(pi, means, linear.variances, y))
    return post


def _pi_from_weights(W, post, grid):
    total = W.sum(axis=1)
    if total.min() < STARVED_TOL:
        t = int(np.argmin(total))
        raise StarvedNeighborhoodError(
            f"kernel mass vanished at grid point {grid.points[t]:.6g}",
            grid_point=float(grid.points[t]))
    # a shared denominator can still round one ulp past 1
    return np.minimum((W @ post) / total[:, None], 1.0)


def mstep_pi(posteriors, index_values, grid, h, kernel=Kernel.GAUSSIAN):
    """Kernel-smoothed responsibilities at each grid point, shape ``(N, k)``."""
    W = kernel_matrix(grid.points, index_values, h, kernel)
    return _pi_from_weights(W, np.asarray(posteriors, dtype=float), grid)


def update_beta_sigma(posteriors, design, y, var_floor=0.0):
    """Weighted least squares per component and weighted residual variances.

    Returns ``(coefficients (k, q), variances (k,))``.
    """
    post = np.asarray(posteriors, dtype=float)
    D = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    k = post.shape[1]
    coef = np.empty((k, D.shape[1]))
    var = np.empty(k)
    for j in range(k):
        w = post[:, j]
        coef[j] = weighted_least_squares(D, y, w)
        r = y - D @ coef[j]
        var[j] = w @ (r * r) / w.sum()
    return coef, _clamp_variances(var, var_floor)


def _component_logpdf(D, y, linear):
    return normal_logpdf(y[:, None], D @ linear.coefficients.T,
                         np.asarray(linear.variances)[None, :])


def _index_objective(X, curves, logpdf):
    grid, table = curves.grid, curves.proportions

    def objective(alpha):
        pi = clamp_proportions(interpolate_columns(grid, table, X @ alpha))
        _, row = posterior_from_logs(np.log(pi) + logpdf)
        return float(row.sum())

    return objective


def index_loglik_mrsip(alpha, X, y, curves, linear, design=None):
    """``sum_i log sum_j pi_j(alpha^T x_i) phi(y_i | x_i^T b_j, s_j^2)`` with fixed curves."""
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    D = linear.design(X) if design is None else design
    objective = _index_objective(X, curves, _component_logpdf(D, y, linear))
    return objective(np.asarray(alpha, dtype=float))


def index_loglik_mrsip_gradient(alpha, X, y, curves, linear):
    """Chain-rule gradient of :func:`index_loglik_mrsip` with respect to ``alpha``."""
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    z = X @ np.asarray(alpha, dtype=float)
    raw = interpolate_columns(curves.grid, curves.proportions, z)
    draw = interpolation_slopes(curves.grid, curves.proportions, z)
    clipped = np.clip(raw, PROPORTION_FLOOR, 1.0 - PROPORTION_FLOOR)
    dclip = np.where(clipped == raw, draw, 0.0)
    total = clipped.sum(axis=1, keepdims=True)
    # d log(c_j / sum c) / dz
    dlogpi = dclip / clipped - dclip.sum(axis=1, keepdims=True) / total
    means = linear.design(X) @ linear.coefficients.T
    post, _ = posterior_from_logs(_log_joint(raw, means, linear.variances, y))
    return X.T @ np.sum(post * dlogpi, axis=1)


def profile_index_mrsip(X, y, curves, linear, start, design=None, **search):
    """Refine the index with proportion curves and linear parameters fixed.

    Same contract as :func:`semimix.msim.profile_index_msim`.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    D = linear.design(X) if design is None else design
    objective = _index_objective(X, curves, _component_logpdf(D, y, linear))
    alpha, f, f0 = profile_sphere(objective, start, **search)
    oriented, flipped = _orient(alpha)
    return ProfileResult(oriented, f, f0, f > f0, flipped)


def _fit_proportions(z, y, means, linear, pi_obs, grid, W, max_iter, tol):
    # Step 2: kernel EM for the proportion curves with (beta, sigma^2) fixed
    pi_grid = None
    it = 0
    for it in range(1, max_iter + 1):
        post, _ = posterior_from_logs(_log_joint(pi_obs, means, linear.variances, y))
        new = _pi_from_weights(W, post, grid)
        change = np.inf if pi_grid is None else float(np.max(np.abs(new - pi_grid)))
        pi_grid = new
        pi_obs = interpolate_columns(grid, pi_grid, z)
        if change < tol:
            return CurveSet(grid, pi_grid), it, True
    return CurveSet(grid, pi_grid), it, False


def _fit_linear(D, y, pi_obs, linear, var_floor, max_iter, tol):
    # Step 3.1: EM for (beta, sigma^2) with the proportions fixed
    prev = -np.inf
    trace = []
    for _ in range(max_iter):
        means = D @ linear.coefficients.T
        post, row = posterior_from_logs(_log_joint(pi_obs, means, linear.variances, y))
        ll = float(row.sum())
        trace.append(ll)
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
        coef, var = update_beta_sigma(post, D, y, var_floor)
        linear = LinearMixtureParams(coef, var, None, linear.intercept)
    return linear, trace


def fit_mrsip(X, y, k, h, init_index=None, init_linear=None, grid_n=DEFAULT_GRID_N,
              intercept=True, seed=None, starts=10, n_slices=10, kernel=Kernel.GAUSSIAN,
              pi_max_iter=500, pi_tol=1e-6, linear_max_iter=200, linear_tol=1e-10,
              inner_rounds=50, outer_rounds=20, index_tol=1e-6, tol=1e-6):
    """Backfitting estimator for the varying-proportion mixture of regressions.

    Parameters
    ----------
    X : array_like, shape (n, p)
        Predictors; they feed both the index and (with an intercept
        prepended when ``intercept``) the component regressions.
    k : int
    h : float
        Bandwidth for the proportion curves.
    init_index, init_linear : optional
        Starting values. By default ``(beta, sigma^2)`` come from a
        mixture of linear regressions and the index from SIR applied to
        its hard clustering.

    Returns
    -------
    MrsipFit
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.size != n:
        raise ShapeError("X and y have different numbers of rows")
    if n <= p + 1:
        raise ShapeError(f"need n > p + 1, got n={n}, p={p}")
    D = add_intercept(X) if intercept else X
    var_floor = variance_floor(y)

    if init_linear is None:
        mix = fit_mixlinreg(X, y, k, starts=starts, intercept=intercept, seed=seed)
        linear = mix.params
        labels = mix.labels
    else:
        linear = init_linear
        labels = None
    start_props = np.full(k, 1.0 / k) if linear.proportions is None else linear.proportions
    linear = LinearMixtureParams(linear.coefficients, linear.variances, None, intercept)

    if init_index is not None:
        alpha = normalize_index(init_index)
    elif labels is not None and k > 1:
        try:
            alpha = sir_from_labels(X, labels, k)
        except SlicingError:
            log.info("hard clustering left a group empty; slicing on y instead")
            alpha = sir_direction(X, y, n_slices)
    else:
        alpha = sir_direction(X, y, n_slices)

    curves = None
    loglik = -np.inf
    trace = []
    iters = {"pi": [], "linear": [], "rounds": 0}
    converged = False
    for outer in range(1, outer_rounds + 1):
        iters["rounds"] = outer
        z = X @ alpha
        grid = build_grid(z, grid_n)
        W = kernel_matrix(grid.points, z, h, kernel)
        if curves is None:
            pi_obs = np.tile(start_props, (n, 1))
        else:
            pi_obs = interpolate_columns(curves.grid, curves.proportions, z)
        means = D @ linear.coefficients.T
        curves, n_pi, _ = _fit_proportions(z, y, means, linear, pi_obs, grid, W,
                                           pi_max_iter, pi_tol)
        iters["pi"].append(n_pi)

        for _ in range(inner_rounds):
            pi_obs = interpolate_columns(curves.grid, curves.proportions, X @ alpha)
            linear, lin_trace = _fit_linear(D, y, pi_obs, linear, var_floor,
                                            linear_max_iter, linear_tol)
            iters["linear"].append(len(lin_trace))
            prof = profile_index_mrsip(X, y, curves, linear, alpha, D)
            if prof.flipped:
                curves = curves.mirrored()
            change = float(np.linalg.norm(prof.index - alpha))
            alpha = prof.index
            if change < index_tol:
                break

        new_ll = index_loglik_mrsip(alpha, X, y, curves, linear, D)
        trace.append(new_ll)
        if abs(new_ll - loglik) <= tol * abs(new_ll):
            loglik = new_ll
            converged = True
            break
        loglik = new_ll

    pi_obs = interpolate_columns(curves.grid, curves.proportions, X @ alpha)
    post = estep_mrsip(pi_obs, D, y, linear)
    return MrsipFit(alpha, curves, linear, post, loglik, float(h), iters, converged,
                    Kernel(kernel).value, trace)


def predict_mrsip(fit, X_new, y=None):
    """Predict responses and cluster new observations.

    With ``y``: ``yhat = sum_j p_j x^T b_j`` using responsibilities from the
    observed response. Without: proportions replace responsibilities.
    """
    X_new = as_2d(X_new)
    if X_new.shape[1] != fit.index.size:
        raise ShapeError(f"expected {fit.index.size} columns, got {X_new.shape[1]}")
    z = X_new @ fit.index
    pi = clamp_proportions(interpolate_columns(fit.proportion_curves.grid,
                                               fit.proportion_curves.proportions, z))
    D = fit.linear.design(X_new)
    means = D @ fit.linear.coefficients.T
    if y is None:
        post = pi
    else:
        post = estep_mrsip(pi, D, y, fit.linear)
    yhat = np.sum(post * means, axis=1)
    return Prediction(yhat, post, np.argmax(post, axis=1))
