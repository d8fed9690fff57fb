"""Variance estimation that trades accuracy (CRPS) against reliability."""

__version__ = "0.1.0"

from .errors import CalibraError, ContractError, DegenerateInputError, DomainError, FitError
from .scores import (
    RsVariant,
    ScoreBreakdown,
    ar_cost,
    ar_weight,
    crps_gaussian,
    crps_min,
    nlpd,
    reliability_score,
    rs_min,
    score_forecasts,
)
from .reliability import calibration_error, calibration_error_of, reliability_diagram
from .estimators import fit_network, fit_pointwise, fit_polynomial, predict_sigma
from .baselines import fit_crps_only, fit_kmeans_sigma, fit_recalibration

__all__ = [
    "CalibraError", "ContractError", "DegenerateInputError", "DomainError", "FitError",
    "RsVariant", "ScoreBreakdown", "ar_cost", "ar_weight", "crps_gaussian", "crps_min", "nlpd",
    "reliability_score", "rs_min", "score_forecasts",
    "calibration_error", "calibration_error_of", "reliability_diagram",
    "fit_network", "fit_pointwise", "fit_polynomial", "predict_sigma",
    "fit_crps_only", "fit_kmeans_sigma", "fit_recalibration",
]
