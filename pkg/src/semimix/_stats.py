"""Small numerical helpers shared by the estimators."""

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def normal_logpdf(y, mean, var):
    """Elementwise ``log phi(y | mean, var)`` with broadcasting."""
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def posterior_from_logs(log_joint):
    """Row-normalise ``exp(log_joint)``; returns ``(posteriors, row log-sums)``."""
    top = np.max(log_joint, axis=1, keepdims=True)
    post = np.exp(log_joint - top)
    mass = post.sum(axis=1, keepdims=True)
    post /= mass
    return post, (top + np.log(mass)).ravel()


def add_intercept(X):
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


def as_2d(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X
