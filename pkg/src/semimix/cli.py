"""
Command-line interface: ``semimix {fit,predict,cv,compare,simulate}``.

Exit codes: 0 success, 2 malformed input or arguments, 3 estimation
failure, 4 non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .artifacts import (SCHEMA_VERSION, DataError, fit_to_dict, load_fit, predict_fitted,
                        read_table, write_csv, write_json)
from .errors import SemimixError
from .mixlin import fit_mixlinreg
from .mrsip import fit_mrsip
from .msim import fit_msim
from .selection import ModelSpec, cv_bandwidth, dfold_compare, mccv_compare
from .simlab import ESTIMATORS, POLICIES, SimulationConfig, run_replications
from .smoothing import DEFAULT_GRID_N, Kernel

log = logging.getLogger("semimix")

EXIT_INPUT, EXIT_ESTIMATION, EXIT_CONVERGENCE = 2, 3, 4
MODELS = ("msim", "mrsip", "mixlin", "linear")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _stage(name, fn, *args, **kwargs):
    """Run an estimation stage, turning estimation errors into exit code 3."""
    try:
        return fn(*args, **kwargs)
    except (SemimixError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise CliError(EXIT_ESTIMATION, f"{name} failed: {exc}") from exc


# ---------------------------------------------------------------- parsing

def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _bandwidth_table(text):
    """``"200:0.109,400:0.1"`` -> ``{200: 0.109, 400: 0.1}``."""
    out = {}
    try:
        for item in _name_list(text):
            n, h = item.split(":")
            out[int(n)] = float(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected n:h pairs, got {text!r}")
    return out


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _common(p, data=True):
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--grid-n", type=_positive(int), default=DEFAULT_GRID_N)
    p.add_argument("--kernel", choices=[k.value for k in Kernel], default=Kernel.GAUSSIAN.value)
    p.add_argument("--workers", type=_positive(int), default=1)
    p.add_argument("--strict", action="store_true",
                   help="exit with status 4 if an estimator does not converge")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if data:
        p.add_argument("data", help="CSV file with a header row")
        p.add_argument("--response", default="y", help="response column (default: y)")
        p.add_argument("--predictors", type=_name_list,
                       help="comma-separated predictor columns (default: all others)")
        p.add_argument("--standardize", action="store_true",
                       help="divide each predictor by its standard deviation")


def _model_args(p, multiple=False):
    if multiple:
        p.add_argument("--models", type=_name_list, default=["msim", "mrsip", "mixlin", "linear"])
    else:
        p.add_argument("--model", choices=MODELS, default="msim")
    p.add_argument("--k", type=_positive(int), default=2)
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--h", type=_positive(float), help="kernel bandwidth")
    bw.add_argument("--cv-bandwidth", action="store_true",
                    help="choose the bandwidth by repeated L-fold cross-validation")
    p.add_argument("--mode", choices=("fib", "one-step"), default="fib",
                   help="msim estimator (default: fib)")
    _cv_args(p)


def _cv_args(p):
    p.add_argument("--candidates", default="auto",
                   help="'auto' or comma-separated bandwidths for cross-validation")
    p.add_argument("--cv-folds", type=_positive(int), default=10)
    p.add_argument("--cv-repetitions", type=_positive(int), default=30)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semimix",
        description="Semiparametric mixtures of single-index models and of regressions "
                    "with single-index proportions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    p = parser.commands["fit"] = sub.add_parser(
        "fit", help="fit a model to a CSV file")
    _common(p)
    _model_args(p)
    p.set_defaults(handler=cmd_fit)

    p = parser.commands["predict"] = sub.add_parser(
        "predict", help="predict and cluster new data with a saved fit")
    _common(p)
    p.add_argument("--fit", required=True, help="fit.json written by 'fit'")
    p.set_defaults(handler=cmd_predict)

    p = parser.commands["cv"] = sub.add_parser(
        "cv", help="select a bandwidth by cross-validation")
    _common(p)
    p.add_argument("--model", choices=("msim", "mrsip"), default="msim")
    p.add_argument("--k", type=_positive(int), default=2)
    p.add_argument("--mode", choices=("fib", "one-step"), default="fib")
    _cv_args(p)
    p.set_defaults(handler=cmd_cv)

    p = parser.commands["compare"] = sub.add_parser(
        "compare", help="compare models by cross-validated prediction error")
    _common(p)
    _model_args(p, multiple=True)
    scheme = p.add_mutually_exclusive_group()
    scheme.add_argument("--mccv", action="store_true",
                        help="Monte-Carlo cross-validation (default)")
    scheme.add_argument("--folds", type=_positive(int), help="d-fold cross-validation")
    p.add_argument("--d", type=_positive(int), default=10, help="MCCV test-set size")
    p.add_argument("--reps", type=_positive(int), default=100, help="MCCV repetitions")
    p.add_argument("--use-test-y", action="store_true",
                   help="weight test predictions by responsibilities from the test response")
    p.set_defaults(handler=cmd_compare)

    p = parser.commands["simulate"] = sub.add_parser(
        "simulate", help="run a simulation study")
    _common(p, data=False)
    p.add_argument("--example", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=_int_list, default=[200, 400, 800])
    p.add_argument("--reps", type=_positive(int), default=100)
    p.add_argument("--estimators", type=_name_list)
    p.add_argument("--policies", type=_name_list, default=["appropriate"],
                   help=f"subset of {','.join(POLICIES)}")
    p.add_argument("--bandwidths", type=_bandwidth_table,
                   help="appropriate bandwidth per n, as n:h pairs")
    p.add_argument("--os-bandwidths", type=_bandwidth_table,
                   help="one-step bandwidth per n (example 1), as n:h pairs")
    p.add_argument("--records", action="store_true",
                   help="also write per-replication records as NDJSON")
    p.set_defaults(handler=cmd_simulate)
    return parser


def _apply_config(parser, argv):
    """Parse once to find ``--config``, then re-parse with its values as defaults."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot read config {args.config}: {exc}") from None
    if not isinstance(values, dict):
        raise CliError(EXIT_INPUT, "config file must hold a JSON object")
    known = set(vars(args))
    values = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(values) - known - {"command"})
    if unknown:
        raise CliError(EXIT_INPUT, f"unknown config keys for {args.command}: {unknown}")
    values.pop("command", None)
    parser.commands[args.command].set_defaults(**values)
    return parser.parse_args(argv)


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items())
            if k not in ("handler", "config", "verbose")}


# ---------------------------------------------------------------- helpers

def _load_data(args):
    table = read_table(args.data)
    X, y, names = table.split(args.response, args.predictors)
    scales = None
    if args.standardize:
        scales = X.std(axis=0, ddof=1)
        if np.any(scales <= 0):
            raise DataError("cannot standardize a constant predictor")
        X = X / scales
    return X, y, names, scales


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _candidates(args):
    if args.candidates == "auto":
        return None
    try:
        return _float_list(args.candidates)
    except argparse.ArgumentTypeError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None


def _fit_options(args, model):
    opts = {"grid_n": args.grid_n, "kernel": Kernel(args.kernel)}
    if model == "msim":
        opts["mode"] = args.mode
    return opts


def _select_bandwidth(args, X, y, model):
    report = _stage("bandwidth cross-validation", cv_bandwidth, X, y, args.k, model,
                    candidates=_candidates(args), L=args.cv_folds,
                    repetitions=args.cv_repetitions, seed=args.seed,
                    fit_options=_fit_options(args, model), workers=args.workers)
    return report


def _write_report(out, report):
    under, appropriate, over = report.policy
    write_csv(os.path.join(out, "bandwidth.csv"), ["candidate", "mean_cv", "times_selected"],
              [(float(h), float(np.nanmean(report.cv_scores[:, i]))
                if not np.all(np.isnan(report.cv_scores[:, i])) else "",
                int(np.sum(report.per_repetition == h)))
               for i, h in enumerate(report.candidates)])
    write_csv(os.path.join(out, "bandwidth_policy.csv"), ["policy", "h"],
              [("under", under), ("appropriate", appropriate), ("over", over)])


def _check_convergence(args, converged, what):
    if not converged:
        msg = f"{what} did not converge"
        if args.strict:
            raise CliError(EXIT_CONVERGENCE, msg)
        log.warning(msg)


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    X, y, names, scales = _load_data(args)
    if y is None:
        raise DataError("fit needs a response column")
    out = _out_dir(args)
    model = args.model
    summary = {"schema_version": SCHEMA_VERSION, "model": model, "k": args.k,
               "n": int(y.size), "predictors": names, "response": args.response}
    h = args.h
    if model in ("msim", "mrsip"):
        if args.cv_bandwidth:
            report = _select_bandwidth(args, X, y, model)
            _write_report(out, report)
            h = report.selected
            summary["bandwidth_policy"] = list(report.policy)
        elif h is None:
            raise CliError(EXIT_INPUT, f"{model} needs --h or --cv-bandwidth")
        summary["bandwidth"] = h

    if model == "msim":
        fit = _stage("msim fit", fit_msim, X, y, args.k, h, seed=args.seed,
                     **_fit_options(args, model))
    elif model == "mrsip":
        fit = _stage("mrsip fit", fit_mrsip, X, y, args.k, h, seed=args.seed,
                     **_fit_options(args, model))
    else:
        k = 1 if model == "linear" else args.k
        fit = _stage("mixture-of-regressions fit", fit_mixlinreg, X, y, k, seed=args.seed)

    posteriors = fit.posteriors
    if model in ("msim", "mrsip"):
        write_csv(os.path.join(out, "index.csv"), ["predictor", "alpha"],
                  zip(names, fit.index.tolist()))
        curves = fit.curves if model == "msim" else fit.proportion_curves
        rows = []
        for t, u in enumerate(curves.grid.points):
            for j in range(curves.k):
                row = [float(u), j, float(curves.proportions[t, j])]
                if curves.means is not None:
                    row += [float(curves.means[t, j]), float(curves.variances[t, j])]
                rows.append(row)
        header = ["grid_point", "component", "pi"] + \
            (["m", "sigma2"] if curves.means is not None else [])
        write_csv(os.path.join(out, "curves.csv"), header, rows)
        summary.update(index=fit.index.tolist(), kernel=fit.kernel,
                       iterations=fit.iterations)
    if model != "msim":
        params = fit.linear if model == "mrsip" else fit.params
        terms = (["intercept"] if params.intercept else []) + names
        rows = []
        for j in range(params.k):
            rows += [(j, term, float(c)) for term, c in zip(terms, params.coefficients[j])]
            rows.append((j, "sigma2", float(params.variances[j])))
            if params.proportions is not None:
                rows.append((j, "pi", float(params.proportions[j])))
        write_csv(os.path.join(out, "linear_params.csv"), ["component", "term", "value"], rows)
        if model in ("mixlin", "linear"):
            summary["iterations"] = fit.n_iter
    write_csv(os.path.join(out, "posteriors.csv"),
              [f"p{j}" for j in range(posteriors.shape[1])], posteriors.tolist())
    write_csv(os.path.join(out, "labels.csv"), ["label"],
              ([int(v)] for v in np.argmax(posteriors, axis=1)))
    summary.update(loglik=float(fit.loglik), converged=bool(fit.converged),
                   standardized=scales is not None)
    if scales is not None:
        summary["scales"] = scales.tolist()
    artifact_model = "linear" if model == "linear" else model
    write_json(os.path.join(out, "fit.json"),
               fit_to_dict(artifact_model, fit, names, args.response, scales))
    write_json(os.path.join(out, "summary.json"), summary)
    write_json(os.path.join(out, "config.json"), _resolved(args))
    print(f"{model}: loglik {fit.loglik:.6g}, converged {bool(fit.converged)}; "
          f"outputs in {out}")
    _check_convergence(args, fit.converged, f"{model} fit")
    return 0


def cmd_predict(args):
    model, fit, scales = load_fit(args.fit)
    with open(args.fit, encoding="utf-8") as fh:
        meta = json.load(fh)
    table = read_table(args.data)
    predictors = args.predictors or meta.get("predictors")
    response = meta.get("response") if args.response == "y" else args.response
    if predictors is None:
        predictors = [c for c in table.names if c != response]
    X, _, _ = table.split(None, predictors)
    y = table.column(response) if response in table.names else None
    if scales is not None:
        X = X / scales
    pred = _stage("prediction", predict_fitted, model, fit, X, y)
    out = _out_dir(args)
    k = pred.posteriors.shape[1]
    write_csv(os.path.join(out, "predictions.csv"),
              ["yhat"] + [f"p{j}" for j in range(k)] + ["label"],
              ([float(a)] + list(map(float, p)) + [int(l)]
               for a, p, l in zip(pred.yhat, pred.posteriors, pred.labels)))
    write_json(os.path.join(out, "config.json"), _resolved(args))
    print(f"predicted {pred.yhat.size} rows ({'with' if y is not None else 'without'} "
          f"responses); outputs in {out}")
    return 0


def cmd_cv(args):
    X, y, names, scales = _load_data(args)
    if y is None:
        raise DataError("cv needs a response column")
    out = _out_dir(args)
    report = _select_bandwidth(args, X, y, args.model)
    _write_report(out, report)
    under, appropriate, over = report.policy
    write_json(os.path.join(out, "summary.json"),
               {"schema_version": SCHEMA_VERSION, "model": args.model, "n": int(y.size),
                "selected": report.selected, "policy": [under, appropriate, over],
                "per_repetition": report.per_repetition.tolist()})
    write_json(os.path.join(out, "config.json"), _resolved(args))
    print(f"selected h = {report.selected:.4g}; policy (under, appropriate, over) = "
          f"({under:.3f}, {appropriate:.3f}, {over:.3f})")
    return 0


def cmd_compare(args):
    X, y, names, scales = _load_data(args)
    if y is None:
        raise DataError("compare needs a response column")
    bad = sorted(set(args.models) - set(MODELS))
    if bad:
        raise CliError(EXIT_INPUT, f"unknown models {bad}")
    out = _out_dir(args)
    specs, bandwidths = [], {}
    for model in args.models:
        h = None
        if model in ("msim", "mrsip"):
            if args.cv_bandwidth:
                h = _select_bandwidth(args, X, y, model).selected
            elif args.h is None:
                raise CliError(EXIT_INPUT, f"{model} needs --h or --cv-bandwidth")
            else:
                h = args.h
            bandwidths[model] = h
        k = 1 if model == "linear" else args.k
        opts = _fit_options(args, model) if model in ("msim", "mrsip") else {}
        specs.append(ModelSpec(model, k, h, options=opts))
    if args.folds:
        result = _stage("comparison", dfold_compare, X, y, specs, args.folds,
                        seed=args.seed, workers=args.workers, use_test_y=args.use_test_y)
    else:
        result = _stage("comparison", mccv_compare, X, y, specs, args.d,
                        repetitions=args.reps, seed=args.seed, workers=args.workers,
                        use_test_y=args.use_test_y)
    os.makedirs(os.path.join(out, "tables"), exist_ok=True)
    write_csv(os.path.join(out, "tables", "mspe.csv"), ["split", "model", "mspe"],
              ((r["split"], r["model"], "" if np.isnan(r["mspe"]) else float(r["mspe"]))
               for r in result.rows()))
    medians = result.medians()
    means = {m: float(np.nanmean(v)) for m, v in result.mspe.items()}
    write_json(os.path.join(out, "summary.json"),
               {"schema_version": SCHEMA_VERSION, "split": result.split,
                "bandwidths": bandwidths, "median_mspe": medians, "mean_mspe": means,
                "failures": result.failures()})
    write_json(os.path.join(out, "config.json"), _resolved(args))
    for m in result.models:
        print(f"{m:<8} median MSPE {medians[m]:.4g}  mean {means[m]:.4g}")
    return 0


_TABLES = {
    1: {"table1_alpha": ["mse_alpha1", "mse_alpha2", "mse_alpha3"],
        "table2_rase": ["rase_pi", "rase_m", "rase_sigma2"]},
    2: {"table3_params": ["mse_beta10", "mse_beta11", "mse_beta12", "mse_beta13",
                          "mse_beta20", "mse_beta21", "mse_beta22", "mse_beta23",
                          "mse_sigma2_1", "mse_sigma2_2"],
        "table4_alpha_rase": ["mse_alpha1", "mse_alpha2", "mse_alpha3", "rase_pi"]},
}


def cmd_simulate(args):
    estimators = args.estimators
    if estimators is not None:
        bad = sorted(set(estimators) - set(ESTIMATORS[args.example]))
        if bad:
            raise CliError(EXIT_INPUT, f"estimators {bad} not available for example "
                                       f"{args.example}; choose from "
                                       f"{list(ESTIMATORS[args.example])}")
    try:
        config = SimulationConfig(example=args.example, n_values=tuple(args.n),
                                  replications=args.reps, estimators=estimators,
                                  policies=tuple(args.policies), bandwidths=args.bandwidths,
                                  one_step_bandwidths=args.os_bandwidths, seed=args.seed,
                                  workers=args.workers, grid_n=args.grid_n,
                                  kernel=args.kernel)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    table = _stage("simulation", run_replications, config)
    out = _out_dir(args)
    tables = os.path.join(out, "tables")
    os.makedirs(tables, exist_ok=True)
    for name, quantities in _TABLES[args.example].items():
        with open(os.path.join(tables, f"{name}.csv"), "w", encoding="utf-8") as fh:
            fh.write(table.wide_csv(quantities))
    with open(os.path.join(tables, "cells.csv"), "w", encoding="utf-8") as fh:
        fh.write(table.to_csv())
    with open(os.path.join(out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(table.to_text())
    if args.records:
        with open(os.path.join(out, "records.ndjson"), "w", encoding="utf-8") as fh:
            fh.write(table.records_ndjson())
    write_json(os.path.join(out, "config.json"), _resolved(args))
    sys.stdout.write(table.to_text())
    if table.failures:
        print(f"{len(table.failures)} failed fits (see log)")
    if args.strict:
        unconverged = sum(1 for r in table.records if r.get("converged") is False)
        _check_convergence(args, unconverged == 0, f"{unconverged} replication fits")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.handler(args)
    except CliError as exc:
        print(f"semimix: error: {exc}", file=sys.stderr)
        return exc.code
    except DataError as exc:
        print(f"semimix: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
