"""
Bandwidth selection and predictive model comparison.

Bandwidths are chosen by repeated L-fold cross-validation of the squared
prediction error, where test responses enter through their
responsibilities (``yhat_t = sum_j p_tj m_j(alpha^T x_t)``). Models are
compared by d-fold or Monte-Carlo cross-validation of the same error.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._stats import as_2d
from .errors import SemimixError
from .mixlin import fit_mixlinreg, predict_mixlin
from .mrsip import fit_mrsip, predict_mrsip
from .msim import fit_msim, predict_msim
from .rng import make_rng, substream_seed
from .sir import sir_direction

__all__ = [
    "ModelSpec",
    "BandwidthReport",
    "PredictionComparison",
    "smoothing_policy",
    "default_candidates",
    "fold_assignment",
    "cv_bandwidth",
    "mccv_compare",
    "dfold_compare",
    "fit_model",
    "predict_model",
]

log = logging.getLogger(__name__)

MODELS = ("msim", "mrsip", "mixlin", "linear")
_FIT_FAILURES = (SemimixError, np.linalg.LinAlgError, FloatingPointError)


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: model family, components, bandwidth and fit keywords.

    ``linear`` is ordinary least squares (a one-component ``mixlin``).
    """

    model: str
    k: int = 2
    h: float | None = None
    name: str | None = None
    options: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model in ("msim", "mrsip") and self.h is not None and self.h <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def label(self):
        return self.name or self.model

    def with_bandwidth(self, h):
        return ModelSpec(self.model, self.k, h, self.name, dict(self.options))


def fit_model(spec, X, y, seed=None):
    """Fit ``spec`` on ``(X, y)``; returns the model-specific fit object."""
    if spec.model in ("msim", "mrsip") and spec.h is None:
        raise ValueError(f"{spec.model} needs a bandwidth")
    if spec.model == "msim":
        return fit_msim(X, y, spec.k, spec.h, seed=seed, **spec.options)
    if spec.model == "mrsip":
        return fit_mrsip(X, y, spec.k, spec.h, seed=seed, **spec.options)
    if spec.model == "mixlin":
        return fit_mixlinreg(X, y, spec.k, seed=seed, **spec.options).params
    return fit_mixlinreg(X, y, 1, **spec.options).params


def predict_model(spec, fit, X, y=None):
    if spec.model == "msim":
        return predict_msim(fit, X, y)
    if spec.model == "mrsip":
        return predict_mrsip(fit, X, y)
    return predict_mixlin(fit, X, y)


def smoothing_policy(h_hat, n):
    """Under-, appropriately and over-smoothing bandwidths ``(h n^(-2/15), h, 1.5 h)``."""
    h_hat = float(h_hat)
    return h_hat * float(n) ** (-2.0 / 15.0), h_hat, 1.5 * h_hat


@dataclass
class BandwidthReport:
    candidates: np.ndarray
    cv_scores: np.ndarray
    selected: float
    n: int
    per_repetition: np.ndarray = None

    @property
    def policy(self):
        return smoothing_policy(self.selected, self.n)


@dataclass
class PredictionComparison:
    models: list
    mspe: dict
    split: dict

    def failures(self):
        return {m: int(np.sum(np.isnan(v))) for m, v in self.mspe.items()}

    def medians(self):
        return {m: float(np.nanmedian(v)) for m, v in self.mspe.items()}

    def rows(self):
        for m in self.models:
            for i, v in enumerate(self.mspe[m]):
                yield {"split": i, "model": m, "mspe": v}


def default_candidates(X, y, count=12, lo=0.3, hi=3.0, n_slices=10):
    """Geometric candidates spanning ``[lo, hi] * range(z) * n^(-1/5)``, z from SIR."""
    X = as_2d(X)
    z = X @ sir_direction(X, y, n_slices)
    scale = np.ptp(z) * X.shape[0] ** (-0.2)
    return np.geomspace(lo * scale, hi * scale, count)


def fold_assignment(n, n_folds, rng):
    """Random partition of ``range(n)`` into ``n_folds`` nearly equal test folds."""
    if not 2 <= n_folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got {n_folds} for n={n}")
    return [np.sort(f) for f in np.array_split(rng.permutation(n), n_folds)]


def _split_error(spec, X, y, train, test, seed, use_test_y=True):
    try:
        fit = fit_model(spec, X[train], y[train], seed)
        pred = predict_model(spec, fit, X[test], y[test] if use_test_y else None)
    except _FIT_FAILURES as exc:
        log.info("fit failed for %s: %s", spec.label, exc)
        return np.nan
    return float(np.sum((y[test] - pred.yhat) ** 2))


def _cv_cell(args):
    spec, X, y, folds, seed = args
    total = 0.0
    n = len(y)
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test, assume_unique=True)
        err = _split_error(spec, X, y, train, test, substream_seed(seed, f))
        if np.isnan(err):
            return np.nan
        total += err
    return total


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(job) for job in jobs]


def cv_bandwidth(X, y, k, model="msim", candidates=None, L=10, repetitions=30, seed=0,
                 fit_options=None, workers=1, max_invalid=0.2):
    """Select a bandwidth by repeated L-fold cross-validation.

    Each repetition draws a fresh random partition; the selected bandwidth
    is the mean over repetitions of the per-repetition minimiser of
    ``CV(h) = sum_l sum_{t in fold l} (y_t - yhat_t)^2``.

    A (repetition, candidate) cell whose fits fail is invalid; candidates
    invalid in more than ``max_invalid`` of the repetitions are dropped.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    cands = default_candidates(X, y) if candidates is None else \
        np.asarray(candidates, dtype=float).ravel()
    if cands.size == 0 or np.any(cands <= 0):
        raise ValueError("candidate bandwidths must be positive")
    base = ModelSpec(model, k, float(cands[0]), options=dict(fit_options or {}))
    jobs = []
    for r in range(repetitions):
        folds = fold_assignment(n, L, make_rng(seed, "cv-folds", r))
        fit_seed = substream_seed(seed, "cv-fit", r)
        jobs.extend((base.with_bandwidth(float(h)), X, y, folds, fit_seed) for h in cands)
    scores = np.array(_map(_cv_cell, jobs, workers)).reshape(repetitions, cands.size)

    usable = np.mean(np.isnan(scores), axis=0) <= max_invalid
    if not usable.any():
        raise SemimixError("every candidate bandwidth failed cross-validation")
    masked = np.where(usable[None, :], scores, np.nan)
    picks = []
    for row in masked:
        if np.all(np.isnan(row)):
            continue
        picks.append(cands[int(np.nanargmin(row))])
    return BandwidthReport(cands, scores, float(np.mean(picks)), n, np.array(picks))


def _compare_split(args):
    specs, X, y, train, test, seed, use_test_y = args
    out = []
    for spec in specs:
        err = _split_error(spec, X, y, train, test, seed, use_test_y)
        out.append(err / len(test))
    return out


def _compare(X, y, specs, splits, seed, workers, descriptor, use_test_y):
    specs = list(specs)
    names = [s.label for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("model specs need distinct names")
    descriptor["use_test_y"] = bool(use_test_y)
    jobs = [(specs, X, y, train, test, substream_seed(seed, "compare-fit", i), use_test_y)
            for i, (train, test) in enumerate(splits)]
    results = np.array(_map(_compare_split, jobs, workers), dtype=float)
    mspe = {name: results[:, i] for i, name in enumerate(names)}
    return PredictionComparison(names, mspe, descriptor)


def mccv_compare(X, y, specs, d, repetitions=500, seed=0, workers=1, use_test_y=False):
    """Monte-Carlo cross-validation: repeated random test sets of size ``d``.

    Test predictions are the fitted conditional means. With ``use_test_y``
    they are instead weighted by responsibilities computed from the test
    responses, as in the bandwidth criterion; that predictor favours
    mixtures even when the data are homogeneous.
    """
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if not 1 <= d < n:
        raise ValueError(f"test size must satisfy 1 <= d < n, got d={d}, n={n}")
    if repetitions < 1:
        raise ValueError("need at least one repetition")
    splits = []
    for r in range(repetitions):
        test = np.sort(make_rng(seed, "mccv", r).choice(n, size=d, replace=False))
        splits.append((np.setdiff1d(np.arange(n), test, assume_unique=True), test))
    return _compare(X, y, specs, splits, seed, workers,
                    {"kind": "mccv", "d": d, "repetitions": repetitions}, use_test_y)


def dfold_compare(X, y, specs, d_folds, seed=0, workers=1, use_test_y=False):
    """d-fold cross-validation; one MSPE per fold. See :func:`mccv_compare`."""
    X = as_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    folds = fold_assignment(n, d_folds, make_rng(seed, "dfold"))
    splits = [(np.setdiff1d(np.arange(n), f, assume_unique=True), f) for f in folds]
    return _compare(X, y, specs, splits, seed, workers,
                    {"kind": "dfold", "folds": d_folds}, use_test_y)
