"""Joint modelling of terminal-trend longitudinal outcomes and survival."""
from .data import (Dataset, DataValidationError, Subject, apply_efron_adjustment,
                   load_dataset, observed_means, partition_groups, write_dataset)
from .estimator import (FitOptions, FitResult, curve_ci, fit, naive_curve_ci,
                        select_knots)
from .likelihood import BreslowHazard, JointLikelihood, ParamLayout, ThetaParams
from .naive import fit_cox_partial, fit_naive, fit_naive_lmm
from .qaly import mean_qaly, qaly_diff, qaly_se_delta, qaly_table
from .simulation import SimConfig, censoring_summary, simulate_trial
from .splines import KnotVector, SplineBasis, place_knots

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DataValidationError", "Subject", "apply_efron_adjustment", "load_dataset",
    "observed_means", "partition_groups", "write_dataset", "FitOptions", "FitResult",
    "curve_ci", "fit", "naive_curve_ci", "select_knots", "BreslowHazard", "JointLikelihood",
    "ParamLayout", "ThetaParams", "fit_cox_partial", "fit_naive", "fit_naive_lmm",
    "mean_qaly", "qaly_diff", "qaly_se_delta", "qaly_table", "SimConfig",
    "censoring_summary", "simulate_trial", "KnotVector", "SplineBasis", "place_knots",
    "__version__",
]
