"""
Reading data files and writing / re-loading fit artifacts.

A fit artifact is a JSON document holding everything needed to predict:
the model family, index, curve tables on their grid, linear parameters and
the column scales applied before fitting. Floats are written with
round-trip precision, so a reloaded fit predicts exactly as the original.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .mixlin import LinearMixtureParams, MixLinFit, predict_mixlin
from .mrsip import MrsipFit, predict_mrsip
from .msim import MsimFit, predict_msim
from .smoothing import CurveSet, Grid

__all__ = [
    "SCHEMA_VERSION",
    "DataError",
    "Table",
    "read_table",
    "fit_to_dict",
    "fit_from_dict",
    "load_fit",
    "predict_fitted",
    "write_csv",
    "write_json",
]

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Malformed input file."""


class Table:
    """A numeric CSV table with named columns."""

    def __init__(self, names, values):
        self.names = list(names)
        self.values = values

    def column(self, name):
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise DataError(f"no column named {name!r}; columns are {self.names}") from None

    def split(self, response=None, predictors=None):
        """``(X, y, predictor_names)``; ``y`` is None when ``response`` is None."""
        if predictors is None:
            predictors = [c for c in self.names if c != response]
        missing = [c for c in predictors if c not in self.names]
        if missing:
            raise DataError(f"missing predictor columns {missing}")
        if not predictors:
            raise DataError("no predictor columns")
        X = np.column_stack([self.column(c) for c in predictors])
        y = None if response is None else self.column(response)
        return X, y, list(predictors)


def read_table(path):
    """Read a headed, comma-separated numeric file; missing cells are rejected."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise DataError(f"{path}: header must have distinct non-empty names")
    if len(rows) < 2:
        raise DataError(f"{path} has a header but no data rows")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}, line {i}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise DataError(f"{path}, line {i}: missing value in column {header[j]!r}")
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}, line {i}: {cell!r} is not a number") from None
            if not math.isfinite(values[i - 2, j]):
                raise DataError(f"{path}, line {i}: non-finite value {cell!r}")
    return Table(header, values)


def _curves_dict(curves):
    out = {"grid": curves.grid.points.tolist(), "proportions": curves.proportions.tolist()}
    if curves.means is not None:
        out["means"] = curves.means.tolist()
        out["variances"] = curves.variances.tolist()
    return out


def _curves_from(d):
    arr = lambda key: None if key not in d else np.array(d[key], dtype=float)
    return CurveSet(Grid(np.array(d["grid"], dtype=float)), arr("proportions"),
                    arr("means"), arr("variances"))


def _linear_dict(params):
    return {"coefficients": params.coefficients.tolist(),
            "variances": params.variances.tolist(),
            "proportions": None if params.proportions is None else params.proportions.tolist(),
            "intercept": bool(params.intercept)}


def _linear_from(d):
    props = d.get("proportions")
    return LinearMixtureParams(np.array(d["coefficients"], dtype=float),
                               np.array(d["variances"], dtype=float),
                               None if props is None else np.array(props, dtype=float),
                               bool(d["intercept"]))


def fit_to_dict(model, fit, predictors=None, response=None, scales=None):
    """JSON-ready description of a fitted model (posteriors are not stored)."""
    out = {"schema_version": SCHEMA_VERSION, "model": model,
           "predictors": predictors, "response": response,
           "scales": None if scales is None else np.asarray(scales, dtype=float).tolist()}
    if isinstance(fit, MsimFit):
        out.update(index=fit.index.tolist(), bandwidth=fit.bandwidth, kernel=fit.kernel,
                   mode=fit.mode, loglik=fit.loglik, converged=bool(fit.converged),
                   curves=_curves_dict(fit.curves))
    elif isinstance(fit, MrsipFit):
        out.update(index=fit.index.tolist(), bandwidth=fit.bandwidth, kernel=fit.kernel,
                   loglik=fit.loglik, converged=bool(fit.converged),
                   curves=_curves_dict(fit.proportion_curves),
                   linear=_linear_dict(fit.linear))
    elif isinstance(fit, MixLinFit):
        out.update(loglik=fit.loglik, converged=bool(fit.converged),
                   linear=_linear_dict(fit.params))
    else:
        raise TypeError(f"cannot serialise {type(fit).__name__}")
    return out


def fit_from_dict(d):
    """Inverse of :func:`fit_to_dict`; returns ``(model, fit, scales)``.

    Reloaded fits carry no posteriors (an empty array) and an empty trace.
    """
    if d.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported fit schema version {d.get('schema_version')!r}")
    model = d["model"]
    scales = None if d.get("scales") is None else np.array(d["scales"], dtype=float)
    empty = np.empty((0, 0))
    if model == "msim":
        fit = MsimFit(np.array(d["index"], dtype=float), _curves_from(d["curves"]), empty,
                      d["loglik"], d["bandwidth"], d["mode"], {}, d["converged"], d["kernel"])
    elif model == "mrsip":
        fit = MrsipFit(np.array(d["index"], dtype=float), _curves_from(d["curves"]),
                       _linear_from(d["linear"]), empty, d["loglik"], d["bandwidth"], {},
                       d["converged"], d["kernel"])
    elif model in ("mixlin", "linear"):
        fit = MixLinFit(_linear_from(d["linear"]), empty, d["loglik"], 0, d["converged"])
    else:
        raise DataError(f"unknown model {model!r} in fit artifact")
    return model, fit, scales


def load_fit(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read fit artifact {path}: {exc}") from None
    try:
        return fit_from_dict(d)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed fit artifact {path}: {exc}") from None


def predict_fitted(model, fit, X, y=None):
    if model == "msim":
        return predict_msim(fit, X, y)
    if model == "mrsip":
        return predict_mrsip(fit, X, y)
    return predict_mixlin(fit.params, X, y)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
