"""
Mixture of single-index models.

Proportions, means and variances of every component are smooth functions
of one projection ``z = alpha^T x``. Curves are estimated on a grid by a
modified EM whose E-step is shared by all grid points (so component labels
agree along the curve); the index is then refined by maximizing the
profiled log-likelihood and the two steps are alternated (backfitting).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from ._stats import as_2d, normal_logpdf, posterior_from_logs
from .errors import ComponentCollapseError, SemimixError, ShapeError, StarvedNeighborhoodError
from .mixlin import Prediction, fit_mixlinreg, variance_floor
from .rng import make_rng
from .sir import normalize_index, sir_direction
from .smoothing import (
    DEFAULT_GRID_N,
    CurveSet,
    Kernel,
    build_grid,
    interpolation_slopes,
    kernel_matrix,
)

__all__ = [
    "MsimFit",
    "EMResult",
    "ProfileResult",
    "Prediction",
    "estep_msim",
    "mstep_msim",
    "run_modified_em",
    "index_loglik_msim",
    "index_loglik_msim_gradient",
    "profile_index_msim",
    "fit_msim",
    "predict_msim",
]

log = logging.getLogger(__name__)

STARVED_TOL = 1e-12
_LOG_TINY = 1e-300


class EMResult(NamedTuple):
    curves: CurveSet
    posteriors: np.ndarray
    trace: list
    n_iter: int
    converged: bool


class ProfileResult(NamedTuple):
    index: np.ndarray
    objective: float
    start_objective: float
    improved: bool
    flipped: bool


@dataclass
class MsimFit:
    index: np.ndarray
    curves: CurveSet
    posteriors: np.ndarray
    loglik: float
    bandwidth: float
    mode: str = "fib"
    iterations: dict = field(default_factory=dict)
    converged: bool = True
    kernel: str = Kernel.GAUSSIAN.value
    trace: list = field(default_factory=list)

    @property
    def k(self):
        return self.curves.k

    @property
    def labels(self):
        return np.argmax(self.posteriors, axis=1)


def _log_joint(y, pi, means, variances):
    return np.log(np.maximum(pi, _LOG_TINY)) + normal_logpdf(y[:, None], means, variances)


def estep_msim(y, pi, means, variances):
    """Responsibilities ``p_ij`` from curve values at the observations.

    ``pi``, ``means`` and ``variances`` are ``(n, k)`` arrays holding the
    curves evaluated at each observation's index value. Computed in log
    space, so distant components never produce 0/0.
    """
    y = np.asarray(y, dtype=float).ravel()
    post, _ = posterior_from_logs(_log_joint(y, pi, means, variances))
    return post


def _mstep_from_weights(W, post, y, grid, var_floor=0.0):
    # centre y so the variance moments do not cancel catastrophically
    shift = float(np.mean(y))
    yc = y - shift
    total = W.sum(axis=1)
    S0 = W @ post
    S1 = W @ (post * yc[:, None])
    S2 = W @ (post * (yc * yc)[:, None])
    bad = np.argwhere(S0 < STARVED_TOL)
    if total.min() < STARVED_TOL or bad.size:
        t, j = (int(np.argmin(total)), None) if total.min() < STARVED_TOL else map(int, bad[0])
        raise StarvedNeighborhoodError(
            f"kernel mass vanished at grid point {grid.points[t]:.6g}"
            + ("" if j is None else f" for component {j}"),
            grid_point=float(grid.points[t]), component=j)
    pi = np.minimum(S0 / total[:, None], 1.0)
    mc = S1 / S0
    var = S2 / S0 - mc * mc
    var = np.maximum(var, var_floor)
    return CurveSet(grid, pi, mc + shift, var)


def mstep_msim(posteriors, index_values, y, grid, h, kernel=Kernel.GAUSSIAN, var_floor=0.0):
    """Kernel-weighted closed-form updates of all curves at every grid point.

    At each grid point ``u``::

        pi_j(u)  = sum_i p_ij K_h(z_i - u) / sum_i K_h(z_i - u)
        m_j(u)   = sum_i p_ij y_i K_h(z_i - u) / sum_i p_ij K_h(z_i - u)
        s2_j(u)  = sum_i p_ij (y_i - m_j(u))^2 K_h(z_i - u) / sum_i p_ij K_h(z_i - u)

    Raises
    ------
    StarvedNeighborhoodError
        If a denominator falls below 1e-12.
    """
    y = np.asarray(y, dtype=float).ravel()
    W = kernel_matrix(grid.points, index_values, h, kernel)
    return _mstep_from_weights(W, np.asarray(posteriors, dtype=float), y, grid, var_floor)


def _curve_loglik(curves, z, y):
    pi, m, v = curves.at(z)
    _, row = posterior_from_logs(_log_joint(y, pi, m, v))
    return float(row.sum())


def run_modified_em(index_values, y, h, grid, init, max_iter=500, tol=1e-6,
                    kernel=Kernel.GAUSSIAN, var_floor=None):
    """Modified EM for the curves at fixed index values.

    Starting from responsibilities ``init``, alternate the grid M-step and a
    single global E-step (curves carried to observations by linear
    interpolation) until the largest absolute curve change is below ``tol``.

    Returns
    -------
    EMResult
        ``posteriors`` are recomputed from the final curves. ``trace`` holds
        the interpolated log-likelihood after every iteration; it is not
        guaranteed to be monotone.
    """
    z = np.asarray(index_values, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if var_floor is None:
        var_floor = variance_floor(y)
    W = kernel_matrix(grid.points, z, h, kernel)
    post = np.asarray(init, dtype=float)
    curves = _mstep_from_weights(W, post, y, grid, var_floor)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pi, m, v = curves.at(z)
        post, row = posterior_from_logs(_log_joint(y, pi, m, v))
        trace.append(float(row.sum()))
        new = _mstep_from_weights(W, post, y, grid, var_floor)
        change = new.max_abs_change(curves)
        curves = new
        if change < tol:
            converged = True
            break
    pi, m, v = curves.at(z)
    post, row = posterior_from_logs(_log_joint(y, pi, m, v))
    trace.append(float(row.sum()))
    if np.any(np.diff(trace) < -1e-8 * np.abs(trace[:-1])):
        log.debug("modified EM log-likelihood trace is not monotone")
    return EMResult(curves, post, trace, it, converged)


def index_loglik_msim(alpha, X, y, curves):
    """Profiled log-likelihood of an index with the curves held fixed.

    ``alpha`` is used as given (no normalisation), so the function is also
    usable for finite-difference checks in the ambient space.
    """
    z = as_2d(X) @ np.asarray(alpha, dtype=float)
    return _curve_loglik(curves, z, np.asarray(y, dtype=float).ravel())


def index_loglik_msim_gradient(alpha, X, y, curves):
    """Chain-rule gradient of :func:`index_loglik_msim` with respect to ``alpha``."""
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    z = X @ np.asarray(alpha, dtype=float)
    pi, m, v = curves.at(z)
    dpi = interpolation_slopes(curves.grid, curves.proportions, z)
    dm = interpolation_slopes(curves.grid, curves.means, z)
    dv = interpolation_slopes(curves.grid, curves.variances, z)
    post, _ = posterior_from_logs(_log_joint(y, pi, m, v))
    r = y[:, None] - m
    dlog = dpi / pi + (r / v) * dm + (r * r / (2 * v * v) - 0.5 / v) * dv
    return X.T @ np.sum(post * dlog, axis=1)


def _hemisphere_map(start):
    """Map free coordinates to the sphere, holding the largest entry's sign fixed."""
    start = np.asarray(start, dtype=float)
    r = int(np.argmax(np.abs(start)))
    anchor = np.sign(start[r])
    free = np.delete(np.arange(start.size), r)

    def to_alpha(theta):
        v = np.empty(start.size)
        v[r] = anchor
        v[free] = theta
        return v / np.linalg.norm(v)

    theta0 = start[free] / abs(start[r])
    return to_alpha, theta0


def _orient(alpha):
    oriented = normalize_index(alpha)
    return oriented, bool(oriented @ alpha < 0)


def profile_sphere(objective, start, step=0.05, xatol=1e-7, fatol=1e-9, max_evals=None):
    """Maximise ``objective(alpha)`` over unit vectors by Nelder-Mead.

    Returns the raw (not sign-normalised) maximiser and its value; falls
    back to ``start`` whenever the search does not beat it.
    """
    start = np.asarray(start, dtype=float) / np.linalg.norm(start)
    f0 = float(objective(start))
    if start.size == 1:
        return start, f0, f0
    to_alpha, theta0 = _hemisphere_map(start)
    d = theta0.size
    simplex = np.vstack([theta0] + [theta0 + step * e for e in np.eye(d)])

    def neg(theta):
        val = objective(to_alpha(theta))
        return -val if np.isfinite(val) else np.inf

    try:
        res = minimize(neg, theta0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": xatol,
                                "fatol": fatol, "maxfev": max_evals or 400 * d})
        alpha, f = to_alpha(res.x), -float(res.fun)
    except (ValueError, FloatingPointError) as exc:
        log.debug("index search failed: %s", exc)
        return start, f0, f0
    if not np.isfinite(f) or f <= f0:
        return start, f0, f0
    return alpha, f, f0


def profile_index_msim(X, y, curves, start, **search):
    """Refine the index with the curves fixed.

    Returns
    -------
    ProfileResult
        ``index`` satisfies the sign convention. ``flipped`` is set when
        that convention negated the search result, in which case the curves
        must be mirrored (see :meth:`CurveSet.mirrored`) to stay consistent.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    alpha, f, f0 = profile_sphere(lambda a: index_loglik_msim(a, X, y, curves),
                                  start, **search)
    oriented, flipped = _orient(alpha)
    return ProfileResult(oriented, f, f0, f > f0, flipped)


def _initial_posteriors(z, y, k, seed):
    """Candidate starting responsibilities: a mixture of lines in ``z``, then
    a mixture of constants (which cannot cross)."""
    if k == 1:
        return [np.ones((z.size, 1))]
    starts = []
    for covariate in (z, np.empty((z.size, 0))):
        try:
            starts.append(fit_mixlinreg(covariate, y, k, seed=seed).posteriors)
        except ComponentCollapseError as exc:
            log.info("mixture start failed: %s", exc)
    return starts


def _initial_em(z, y, k, h, grid, seed, restarts, max_iter, tol, kernel, var_floor):
    # keep the start whose modified EM ends at the highest log-likelihood
    best, best_ll = None, -np.inf
    for post0 in _initial_posteriors(z, y, k, seed):
        try:
            em = run_modified_em(z, y, h, grid, post0, max_iter, tol, kernel, var_floor)
        except (ComponentCollapseError, StarvedNeighborhoodError) as exc:
            log.info("start abandoned: %s", exc)
            continue
        ll = _curve_loglik(em.curves, z, y)
        if ll > best_ll:
            best, best_ll = em, ll
    if best is None:
        log.info("deterministic starts failed; using random responsibilities")
        best = _best_random_em(z, y, k, h, grid, seed, restarts, max_iter, tol, kernel,
                               var_floor)
    return best


def _random_posteriors(n, k, rng):
    return rng.dirichlet(np.ones(k), size=n)


def fit_msim(X, y, k, h, mode="fib", init_index=None, grid_n=DEFAULT_GRID_N,
             n_slices=10, seed=None, em_max_iter=500, em_tol=1e-6, max_rounds=20,
             index_tol=1e-6, kernel=Kernel.GAUSSIAN, random_restarts=5):
    """Fit a k-component mixture of single-index models.

    Parameters
    ----------
    X : array_like, shape (n, p)
    y : array_like, shape (n,)
    k : int
        Number of components.
    h : float
        Kernel bandwidth on the index scale.
    mode : {"fib", "one-step"}
        ``"one-step"`` stops after the curves are fitted at the initial
        index; ``"fib"`` alternates index refinement and curve fitting.
    init_index : array_like, optional
        Starting index; defaults to the SIR direction.
    seed : int or None
        Seeds the mixture-of-lines initialization of the responsibilities.

    Returns
    -------
    MsimFit
    """
    if mode not in ("fib", "one-step"):
        raise ValueError(f"unknown mode {mode!r}")
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if y.size != n:
        raise ShapeError("X and y have different numbers of rows")
    if n <= p or k < 1:
        raise ShapeError(f"need n > p and k >= 1, got n={n}, p={p}, k={k}")
    alpha = normalize_index(init_index) if init_index is not None else \
        sir_direction(X, y, n_slices)
    var_floor = variance_floor(y)

    z = X @ alpha
    grid = build_grid(z, grid_n)
    em = _initial_em(z, y, k, h, grid, seed, random_restarts, em_max_iter, em_tol,
                     kernel, var_floor)
    em_iters = [em.n_iter]
    rounds = 0
    converged = em.converged
    if mode == "fib" and p > 1:
        converged = False
        for rounds in range(1, max_rounds + 1):
            prof = profile_index_msim(X, y, em.curves, alpha)
            carried = em.curves.mirrored() if prof.flipped else em.curves
            new_alpha = prof.index
            z = X @ new_alpha
            grid = build_grid(z, grid_n)
            pi, m, v = carried.at(z)
            post0 = estep_msim(y, pi, m, v)
            em = run_modified_em(z, y, h, grid, post0, em_max_iter, em_tol, kernel,
                                 var_floor)
            em_iters.append(em.n_iter)
            change = float(np.linalg.norm(new_alpha - alpha))
            alpha = new_alpha
            if change < index_tol:
                converged = em.converged
                break
    loglik = index_loglik_msim(alpha, X, y, em.curves)
    return MsimFit(alpha, em.curves, em.posteriors, loglik, float(h), mode,
                   {"em": em_iters, "rounds": rounds}, converged,
                   Kernel(kernel).value, em.trace)


def _best_random_em(z, y, k, h, grid, seed, restarts, max_iter, tol, kernel, var_floor):
    rng = make_rng(seed)
    best, best_ll, err = None, -np.inf, None
    for _ in range(restarts):
        try:
            em = run_modified_em(z, y, h, grid, _random_posteriors(z.size, k, rng),
                                 max_iter, tol, kernel, var_floor)
        except SemimixError as exc:
            err = exc
            continue
        ll = _curve_loglik(em.curves, z, y)
        if best is None or ll > best_ll:
            best, best_ll = em, ll
    if best is None:
        raise err
    return best


def predict_msim(fit, X_new, y=None):
    """Predict responses and cluster new observations.

    Without ``y`` the prediction is the proportion-weighted mean
    ``sum_j pi_j(z) m_j(z)`` and the "posteriors" are the proportions.
    With ``y`` (cross-validation use) the responsibilities are computed
    from the observed responses and ``yhat = sum_j p_j m_j(z)``.
    """
    X_new = as_2d(X_new)
    if X_new.shape[1] != fit.index.size:
        raise ShapeError(f"expected {fit.index.size} columns, got {X_new.shape[1]}")
    z = X_new @ fit.index
    pi, m, v = fit.curves.at(z)
    if y is None:
        post = pi / pi.sum(axis=1, keepdims=True)
    else:
        post = estep_msim(np.asarray(y, dtype=float).ravel(), pi, m, v)
    yhat = np.sum(post * m, axis=1)
    return Prediction(yhat, post, np.argmax(post, axis=1))
