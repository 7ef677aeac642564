"""Cross-fitted double/debiased machine learning estimators.

Supports five models (partially linear, interactive/binary-treatment,
partially linear IV, flexible partially linear IV with a learned optimal
instrument, and interactive IV for local effects), a pluggable learner
menu, constrained-least-squares stacking and short-stacking, robust and
cluster-robust inference, repetition aggregation, and a Monte Carlo
harness.
"""

from .crossfit import (
    CefFit,
    CrossFitResult,
    ShortStackFit,
    crossfit_cef,
    crossfit_fiv_pair,
    crossfit_model,
    mspe_report,
    shortstack_all,
)
from .data import CefKind, Dataset, ModelKind, load_csv, required_cefs, write_csv
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DdmlError,
    DegenerateError,
    EstimationError,
)
from .estimators import (
    Estimate,
    TrimPolicy,
    aggregate_reps,
    estimate_ate,
    estimate_atet,
    estimate_fiv,
    estimate_late,
    estimate_partial,
    estimate_pliv,
    iv_regression,
    linear_regression,
)
from .features import expand_features
from .folds import FoldAssignment, assign_folds, export_folds_csv, import_folds
from .learners import (
    EarlyStop,
    GradientBoostLearner,
    LassoCvLearner,
    LearnerSpec,
    OlsLearner,
    RandomForestLearner,
    RidgeCvLearner,
)
from .pipeline import PipelineResult, PipelineSpec, run_pipeline
from .simulate import (
    DgpSpec,
    McReport,
    SimulatedData,
    calibrate_constants,
    gen_dgp,
    oracle_estimate,
    run_mc,
    signal_g,
)
from .stacking import (
    StackWeights,
    cls_weights,
    short_stack,
    single_best_weights,
    stack_cef,
)

__version__ = "0.1.0"

__all__ = [
    "CefFit", "CefKind", "ConfigError", "ConvergenceError", "CrossFitResult",
    "DataError", "Dataset", "DdmlError", "DegenerateError", "DgpSpec",
    "EarlyStop", "Estimate", "EstimationError", "FoldAssignment",
    "GradientBoostLearner", "LassoCvLearner", "LearnerSpec", "McReport",
    "ModelKind", "OlsLearner", "PipelineResult", "PipelineSpec",
    "RandomForestLearner", "RidgeCvLearner", "ShortStackFit", "SimulatedData",
    "StackWeights", "TrimPolicy", "aggregate_reps", "assign_folds",
    "calibrate_constants", "cls_weights", "crossfit_cef", "crossfit_fiv_pair",
    "crossfit_model", "estimate_ate", "estimate_atet", "estimate_fiv",
    "estimate_late", "estimate_partial", "estimate_pliv", "expand_features",
    "export_folds_csv", "gen_dgp", "import_folds", "iv_regression",
    "linear_regression", "load_csv", "mspe_report", "oracle_estimate",
    "required_cefs", "run_mc", "run_pipeline", "short_stack", "shortstack_all",
    "signal_g", "single_best_weights", "stack_cef", "write_csv",
]
