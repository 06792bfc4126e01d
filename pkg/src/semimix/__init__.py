"""
Semiparametric mixture models indexed by a single linear combination of
the predictors.

* :func:`fit_msim`: mixture of single-index models, where proportions,
  means and variances are smooth functions of ``alpha^T x``.
* :func:`fit_mrsip`: mixture of linear regressions whose proportions are
  smooth functions of ``alpha^T x``.
* :func:`fit_mixlinreg`: the ordinary finite mixture of linear regressions.
"""

__version__ = "0.1.0"

from .errors import (ComponentCollapseError, DegenerateGridError, DegenerateIndexError,
                     DomainError, EmptyDataError, InvalidBandwidthError, RankDeficiencyError,
                     SemimixError, ShapeError, SlicingError, StarvedNeighborhoodError)
from .mixlin import (LinearMixtureParams, MixLinFit, Prediction, fit_mixlinreg,
                     predict_mixlin)
from .mrsip import MrsipFit, fit_mrsip, predict_mrsip
from .msim import MsimFit, fit_msim, predict_msim, run_modified_em
from .selection import (BandwidthReport, ModelSpec, PredictionComparison, cv_bandwidth,
                        dfold_compare, mccv_compare, smoothing_policy)
from .simlab import (ReplicationTable, SimulationConfig, gen_example1, gen_example2,
                     match_components, rase, run_replications)
from .sir import normalize_index, sir_direction, sir_from_labels
from .smoothing import CurveSet, Grid, Kernel, build_grid

__all__ = [
    "__version__",
    "BandwidthReport", "ComponentCollapseError", "CurveSet", "DegenerateGridError",
    "DegenerateIndexError", "DomainError", "EmptyDataError", "Grid",
    "InvalidBandwidthError", "Kernel", "LinearMixtureParams", "MixLinFit", "ModelSpec",
    "MrsipFit", "MsimFit", "Prediction", "PredictionComparison", "RankDeficiencyError",
    "ReplicationTable", "SemimixError", "ShapeError", "SimulationConfig", "SlicingError",
    "StarvedNeighborhoodError", "build_grid", "cv_bandwidth", "dfold_compare",
    "fit_mixlinreg", "fit_mrsip", "fit_msim", "gen_example1", "gen_example2",
    "match_components", "mccv_compare", "normalize_index", "predict_mixlin",
    "predict_mrsip", "predict_msim", "rase", "run_modified_em", "run_replications",
    "sir_direction", "sir_from_labels", "smoothing_policy",
]
