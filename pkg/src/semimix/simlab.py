"""
Simulation designs, accuracy metrics and the Monte-Carlo replication harness.

Two designs are provided: a two-component mixture of single-index models
(``example=1``) and a two-component mixture of regressions with
single-index proportions (``example=2``); both use ``x ~ U(0, 1)^3`` and
``alpha = (1, 1, 1) / sqrt(3)``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SemimixError, ShapeError
from .mixlin import fit_mixlinreg
from .mrsip import fit_mrsip
from .msim import fit_msim
from .rng import make_rng, substream_seed
from .selection import smoothing_policy
from .sir import sir_direction
from .smoothing import DEFAULT_GRID_N, Kernel, build_grid

__all__ = [
    "Dataset",
    "SyntheticTruth",
    "SimulationConfig",
    "ReplicationTable",
    "Cell",
    "TRUE_INDEX",
    "EXAMPLE2_COEFFICIENTS",
    "EXAMPLE2_VARIANCES",
    "PAPER_BANDWIDTHS",
    "ONE_STEP_BANDWIDTHS",
    "gen_example1",
    "gen_example2",
    "rase",
    "rase_values",
    "match_components",
    "run_replications",
    "ESTIMATORS",
    "POLICIES",
]

log = logging.getLogger(__name__)

TRUE_INDEX = np.ones(3) / np.sqrt(3.0)
EXAMPLE2_COEFFICIENTS = np.array([[1.0, 0.0, 3.0, 0.0], [-1.0, 2.0, 0.0, 3.0]])
EXAMPLE2_VARIANCES = np.array([0.7, 0.6])

# appropriate bandwidths by design and sample size (the CV choices behind
# the published tables); other n are rate-scaled from the nearest entry
PAPER_BANDWIDTHS = {1: {200: 0.109, 400: 0.100, 800: 0.091},
                    2: {200: 0.131, 400: 0.103, 800: 0.080}}
ONE_STEP_BANDWIDTHS = {200: 0.125, 400: 0.108, 800: 0.094}

ESTIMATORS = {1: ("sir", "os", "fib", "fib_true"), 2: ("mrsip", "mrsip_true", "mixlin")}
DEFAULT_ESTIMATORS = {1: ("sir", "os", "fib"), 2: ("mrsip", "mixlin")}
POLICIES = ("under", "appropriate", "over")
_FAILURES = (SemimixError, np.linalg.LinAlgError, FloatingPointError)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self):
        return self.y.size


@dataclass
class SyntheticTruth:
    """The generating model of a simulated dataset.

    ``proportions``, ``means`` and ``variances`` are functions of the index
    returning ``(len(z), k)`` arrays; for the linear-means design ``means``
    and ``variances`` are ``None`` and ``coefficients`` / ``linear_variances``
    hold the component regressions instead.
    """

    example: int
    index: np.ndarray
    labels: np.ndarray
    seed: object
    proportions: object
    means: object = None
    variances: object = None
    coefficients: np.ndarray | None = None
    linear_variances: np.ndarray | None = None


def example1_proportions(z):
    p1 = 0.5 + 0.3 * np.sin(np.pi * np.asarray(z, dtype=float))
    return np.column_stack([p1, 1.0 - p1])


def example1_means(z):
    z = np.asarray(z, dtype=float)
    return np.column_stack([3.0 - np.sin(2 * np.pi * z / np.sqrt(3.0)),
                            np.cos(np.sqrt(3.0) * np.pi * z)])


def example1_sds(z):
    z = np.asarray(z, dtype=float)
    return np.column_stack([0.7 + np.sin(3 * np.pi * z) / 15.0,
                            0.3 + np.cos(1.3 * np.pi * z) / 10.0])


def example1_variances(z):
    return example1_sds(z) ** 2


def example2_proportions(z):
    p1 = 0.5 - 0.35 * np.sin(np.pi * np.asarray(z, dtype=float))
    return np.column_stack([p1, 1.0 - p1])


def _draw_labels(rng, pi):
    # component j with probability pi[:, j]
    u = rng.uniform(size=pi.shape[0])
    return np.minimum(np.sum(u[:, None] >= np.cumsum(pi, axis=1), axis=1), pi.shape[1] - 1)


def gen_example1(n, seed=None):
    """Draw ``n`` observations from the two-component single-index mixture."""
    rng = make_rng(seed)
    X = rng.uniform(size=(n, 3))
    z = X @ TRUE_INDEX
    labels = _draw_labels(rng, example1_proportions(z))
    rows = np.arange(n)
    mean = example1_means(z)[rows, labels]
    sd = example1_sds(z)[rows, labels]
    y = mean + sd * rng.standard_normal(n)
    truth = SyntheticTruth(1, TRUE_INDEX.copy(), labels, seed, example1_proportions,
                           example1_means, example1_variances)
    return Dataset(X, y), truth


def gen_example2(n, seed=None):
    """Draw ``n`` observations from the varying-proportion mixture of regressions."""
    rng = make_rng(seed)
    X = rng.uniform(size=(n, 3))
    z = X @ TRUE_INDEX
    labels = _draw_labels(rng, example2_proportions(z))
    D = np.column_stack([np.ones(n), X])
    mean = np.sum(D * EXAMPLE2_COEFFICIENTS[labels], axis=1)
    y = mean + np.sqrt(EXAMPLE2_VARIANCES[labels]) * rng.standard_normal(n)
    truth = SyntheticTruth(2, TRUE_INDEX.copy(), labels, seed, example2_proportions,
                           coefficients=EXAMPLE2_COEFFICIENTS.copy(),
                           linear_variances=EXAMPLE2_VARIANCES.copy())
    return Dataset(X, y), truth


GENERATORS = {1: gen_example1, 2: gen_example2}


def rase_values(estimated, true):
    """``sqrt(N^-1 sum_j sum_t (est - true)^2)`` for ``(N, k)`` tables."""
    estimated = np.asarray(estimated, dtype=float)
    true = np.asarray(true, dtype=float)
    if estimated.shape != true.shape:
        raise ShapeError(f"shape mismatch {estimated.shape} vs {true.shape}")
    return float(np.sqrt(np.sum((estimated - true) ** 2) / estimated.shape[0]))


_FAMILY_SLOTS = {"pi": "proportions", "m": "means", "sigma2": "variances"}


def rase(estimated, truth, family="m"):
    """Root average squared error of one curve family on the estimate's own grid.

    ``truth`` is a function of the index returning ``(len(z), k)`` values, or
    a :class:`SyntheticTruth`. For ``family="pi"`` only the first ``k - 1``
    proportions enter, since the last is determined by the others.
    """
    slot = _FAMILY_SLOTS[family]
    fn = getattr(truth, slot) if isinstance(truth, SyntheticTruth) else truth
    est = getattr(estimated, slot)
    tru = fn(estimated.grid.points)
    if est.shape != tru.shape:
        raise ShapeError(f"estimate has {est.shape[1]} components, truth {tru.shape[1]}")
    if family == "pi":
        est, tru = est[:, :-1], tru[:, :-1]
    return rase_values(est, tru)


def match_components(estimated, truth, criterion=None):
    """Permutation of estimated components that best matches the truth.

    ``estimated`` and ``truth`` are sequences indexed by component. Returns
    ``perm`` with ``estimated[perm[j]]`` matched to ``truth[j]``, minimising
    ``criterion(reordered_estimated, truth)`` (default: total squared
    difference) over all ``k!`` permutations.
    """
    k = len(truth)
    if len(estimated) != k:
        raise ValueError("estimated and truth have different component counts")
    if k > 6:
        raise ValueError("exhaustive matching supports at most 6 components")
    if criterion is None:
        est = np.asarray(estimated, dtype=float)
        tru = np.asarray(truth, dtype=float)
        criterion = lambda e, t: float(np.sum((np.asarray(e) - t) ** 2))
        estimated = est
        truth = tru
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(k)):
        reordered = [estimated[i] for i in perm]
        cost = criterion(reordered, truth)
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


def _msim_perm(curves, truth):
    grid = curves.grid.points
    est = [np.stack([curves.proportions[:, j], curves.means[:, j], curves.variances[:, j]])
           for j in range(curves.k)]
    tru_tables = [truth.proportions(grid), truth.means(grid), truth.variances(grid)]
    tru = [np.stack([t[:, j] for t in tru_tables]) for j in range(curves.k)]

    def total_rase(e, t):
        return sum(np.sqrt(np.sum((np.array([ej[f] for ej in e]) -
                                   np.array([tj[f] for tj in t])) ** 2) / grid.size)
                   for f in range(3))

    return match_components(est, tru, total_rase)


@dataclass
class SimulationConfig:
    example: int = 1
    n_values: tuple = (200, 400, 800)
    replications: int = 100
    estimators: tuple | None = None
    policies: tuple = ("appropriate",)
    bandwidths: dict | None = None
    one_step_bandwidths: dict | None = None
    seed: int = 0
    workers: int = 1
    grid_n: int = DEFAULT_GRID_N
    k: int = 2
    max_failure_rate: float = 0.1
    kernel: str = Kernel.GAUSSIAN.value

    def __post_init__(self):
        if self.example not in GENERATORS:
            raise ValueError(f"unknown example {self.example}")
        self.n_values = tuple(int(n) for n in self.n_values)
        if self.estimators is None:
            self.estimators = DEFAULT_ESTIMATORS[self.example]
        self.estimators = tuple(self.estimators)
        unknown = set(self.estimators) - set(ESTIMATORS[self.example])
        if unknown:
            raise ValueError(f"estimators {sorted(unknown)} not available for "
                             f"example {self.example}")
        bad = set(self.policies) - set(POLICIES)
        if bad:
            raise ValueError(f"unknown bandwidth policies {sorted(bad)}")
        self.kernel = Kernel(self.kernel).value
        if self.replications < 1:
            raise ValueError("need at least one replication")

    def appropriate_bandwidth(self, n, one_step=False):
        table = (self.one_step_bandwidths or ONE_STEP_BANDWIDTHS) if one_step else \
            (self.bandwidths or PAPER_BANDWIDTHS[self.example])
        table = {int(k): float(v) for k, v in table.items()}
        if n in table:
            return table[n]
        near = min(table, key=lambda m: abs(np.log(m / n)))
        return table[near] * (n / near) ** (-0.2)

    def bandwidth(self, n, policy, one_step=False):
        under, appropriate, over = smoothing_policy(self.appropriate_bandwidth(n, one_step), n)
        return {"under": under, "appropriate": appropriate, "over": over}[policy]


@dataclass
class Cell:
    mean: float
    sd: float | None
    count: int
    scale: float


@dataclass
class ReplicationTable:
    """Aggregated replication results.

    ``cells`` maps ``(n, estimator, policy, quantity)`` to a :class:`Cell`
    whose mean/sd are already multiplied by ``scale``. Mean squared errors
    are stored under ``mse_*`` quantities. ``timings`` holds wall-clock
    seconds per fit and is kept apart from the deterministic content.
    """

    config: SimulationConfig
    cells: dict
    records: list
    failures: list
    timings: dict = field(default_factory=dict)

    def get(self, n, estimator, quantity, policy="appropriate"):
        return self.cells[(n, estimator, policy, quantity)]

    def mean(self, n, estimator, quantity, policy="appropriate"):
        return self.get(n, estimator, quantity, policy).mean

    def bandwidths(self):
        out = {}
        for rec in self.records:
            out[(rec["n"], rec["estimator"], rec["policy"])] = rec["h"]
        return out

    def quantities(self):
        seen = []
        for key in self.cells:
            if key[3] not in seen:
                seen.append(key[3])
        return seen

    def rows(self):
        hs = self.bandwidths()
        for (n, est, pol, qty), c in self.cells.items():
            yield {"n": n, "estimator": est, "policy": pol, "h": hs.get((n, est, pol)),
                   "quantity": qty, "mean": c.mean, "sd": c.sd, "count": c.count,
                   "scale": c.scale}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["n", "estimator", "policy", "h", "quantity",
                                            "mean", "sd", "count", "scale"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def wide_csv(self, quantities):
        """Table-shaped CSV: one row per (n, estimator, policy), mean and sd per quantity."""
        hs = self.bandwidths()
        keys = sorted({k[:3] for k in self.cells if k[3] in quantities},
                      key=lambda k: (k[0], self.config.estimators.index(k[1]),
                                     (POLICIES + ("none",)).index(k[2])))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "estimator", "policy", "h"] +
                   [f"{q}_{s}" for q in quantities for s in ("mean", "sd")])
        for n, est, pol in keys:
            row = [n, est, pol, _fmt(hs.get((n, est, pol)))]
            for q in quantities:
                c = self.cells.get((n, est, pol, q))
                row += ["", ""] if c is None else [_fmt(c.mean), _fmt(c.sd)]
            w.writerow(row)
        return buf.getvalue()

    def to_text(self):
        lines = []
        hs = self.bandwidths()
        for n in self.config.n_values:
            lines.append(f"n = {n}")
            for key in [k for k in self.cells if k[0] == n]:
                _, est, pol, qty = key
                c = self.cells[key]
                sd = "" if c.sd is None else f" ({c.sd:.4g})"
                h = hs.get((n, est, pol))
                htxt = "" if h is None else f" h={h:.3f}"
                scale = " x100" if c.scale != 1 else ""
                lines.append(f"  {est:<10} {pol:<12}{htxt:<9} {qty:<10} "
                             f"{c.mean:.4g}{sd}{scale}  [{c.count}]")
        return "\n".join(lines) + "\n"

    def records_ndjson(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _msim_record(fit, truth):
    perm = _msim_perm(fit.curves, truth)
    curves = fit.curves.permuted(perm)
    return {"alpha_sqerr": ((fit.index - truth.index) ** 2).tolist(),
            "rase_pi": rase(curves, truth, "pi"), "rase_m": rase(curves, truth, "m"),
            "rase_sigma2": rase(curves, truth, "sigma2"), "converged": bool(fit.converged)}


def _linear_record(coef, variances, truth):
    perm = list(match_components(coef, truth.coefficients))
    coef, variances = coef[perm], variances[perm]
    return perm, {"beta_sqerr": ((coef - truth.coefficients) ** 2).ravel().tolist(),
                  "sigma2_sqerr": ((variances - truth.linear_variances) ** 2).tolist()}


def _fit_estimator(est, data, truth, h, config, fit_seed):
    X, y = data.X, data.y
    k = config.k
    if est == "sir":
        alpha = sir_direction(X, y)
        return {"alpha_sqerr": ((alpha - truth.index) ** 2).tolist()}
    if est in ("os", "fib", "fib_true"):
        fit = fit_msim(X, y, k, h, mode="one-step" if est == "os" else "fib",
                       init_index=truth.index if est == "fib_true" else None,
                       grid_n=config.grid_n, seed=fit_seed, kernel=Kernel(config.kernel))
        return _msim_record(fit, truth)
    if est in ("mrsip", "mrsip_true"):
        fit = fit_mrsip(X, y, k, h, init_index=truth.index if est == "mrsip_true" else None,
                        grid_n=config.grid_n, seed=fit_seed, kernel=Kernel(config.kernel))
        perm, rec = _linear_record(fit.linear.coefficients, fit.linear.variances, truth)
        curves = fit.proportion_curves.permuted(perm)
        rec.update({"alpha_sqerr": ((fit.index - truth.index) ** 2).tolist(),
                    "rase_pi": rase(curves, truth, "pi"), "converged": bool(fit.converged)})
        return rec
    if est == "mixlin":
        fit = fit_mixlinreg(X, y, k, seed=fit_seed)
        perm, rec = _linear_record(fit.params.coefficients, fit.params.variances, truth)
        grid = build_grid(X @ truth.index, config.grid_n).points
        est_pi = np.tile(fit.params.proportions[perm], (grid.size, 1))
        rec["rase_pi"] = rase_values(est_pi[:, :-1], truth.proportions(grid)[:, :-1])
        rec["converged"] = bool(fit.converged)
        return rec
    raise ValueError(f"unknown estimator {est!r}")


def _replicate(args):
    config, n, rep = args
    data_seed = np.random.SeedSequence(config.seed, spawn_key=(config.example, n, rep, 0))
    fit_seed = substream_seed(config.seed, config.example, n, rep, 1)
    data, truth = GENERATORS[config.example](n, data_seed)
    out = []
    for est in config.estimators:
        policies = ("none",) if est == "sir" or est == "mixlin" else config.policies
        for pol in policies:
            h = None if pol == "none" else config.bandwidth(n, pol, one_step=(est == "os"))
            base = {"example": config.example, "n": n, "rep": rep, "estimator": est,
                    "policy": pol, "h": h, "seed": [config.seed, config.example, n, rep]}
            t0 = time.perf_counter()
            try:
                rec = _fit_estimator(est, data, truth, h, config, fit_seed)
                rec["error"] = None
            except _FAILURES as exc:
                rec = {"error": f"{type(exc).__name__}: {exc}"}
            elapsed = time.perf_counter() - t0
            out.append(({**base, **rec}, elapsed))
    return out


_QUANTITIES = {
    "alpha_sqerr": lambda rec: {f"mse_alpha{l + 1}": v for l, v in
                                enumerate(rec["alpha_sqerr"])},
    "beta_sqerr": lambda rec: {f"mse_beta{j + 1}{l}": v for j, row in
                               enumerate(np.reshape(rec["beta_sqerr"], (2, -1)))
                               for l, v in enumerate(row)},
    "sigma2_sqerr": lambda rec: {f"mse_sigma2_{j + 1}": v for j, v in
                                 enumerate(rec["sigma2_sqerr"])},
}


def _scale_for(example, qty):
    # tables of squared errors and (for the linear-means design) RASE of
    # proportions are reported times 100
    if qty.startswith("mse_"):
        return 100.0
    if example == 2 and qty == "rase_pi":
        return 100.0
    return 1.0


def _aggregate(config, records):
    values = {}
    for rec in records:
        if rec["error"] is not None:
            continue
        key = (rec["n"], rec["estimator"], rec["policy"])
        flat = {}
        for name, expand in _QUANTITIES.items():
            if name in rec:
                flat.update(expand(rec))
        for name in ("rase_pi", "rase_m", "rase_sigma2"):
            if name in rec:
                flat[name] = rec[name]
        for qty, v in flat.items():
            values.setdefault(key + (qty,), []).append(v)
    cells = {}
    for key, vals in values.items():
        scale = _scale_for(config.example, key[3])
        arr = np.asarray(vals, dtype=float) * scale
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else None
        cells[key] = Cell(float(np.mean(arr)), sd, int(arr.size), scale)
    return cells


def run_replications(config):
    """Simulate, fit every estimator and aggregate per (n, estimator, policy).

    Replications are independent jobs seeded by ``(seed, example, n, rep)``,
    so results are identical for any ``workers``. Failed fits are recorded
    with their seed path; the run raises if more than
    ``max_failure_rate`` of the fits fail.
    """
    jobs = [(config, n, rep) for n in config.n_values for rep in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_replicate, jobs))
    else:
        results = [_replicate(job) for job in jobs]
    records, timings = [], {}
    for batch in results:
        for rec, elapsed in batch:
            records.append(rec)
            timings.setdefault((rec["n"], rec["estimator"], rec["policy"]), []).append(elapsed)
    failures = [r for r in records if r["error"] is not None]
    for f in failures:
        log.warning("replication failed: n=%s rep=%s %s: %s", f["n"], f["rep"],
                    f["estimator"], f["error"])
    if len(failures) > config.max_failure_rate * len(records):
        raise SemimixError(f"{len(failures)} of {len(records)} fits failed")
    return ReplicationTable(config, _aggregate(config, records), records, failures, timings)


def config_to_dict(config):
    return asdict(config)
