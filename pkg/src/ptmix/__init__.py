"""Penalized mixtures of multivariate t distributions for clustering with
variable selection, modified-BIC model choice and bootstrap gene ranking."""

__version__ = "0.1.0"

from .density import mahalanobis_sq, sample_t, t_log_pdf
from .em import EmConfig, e_step, fit, penalized_log_likelihood
from .errors import (
    CalibrationError, DegenerateComponentError, DomainError, FitFailure, NumericalError,
    PtmixError, SelectionError, ValidationError,
)
from .metrics import adjusted_rand_index, selection_scores
from .model import (
    DataMatrix, FitResult, LatentExpectations, MixtureParams, PenaltyConfig, hard_assignments,
    standardize,
)
from .numerics import RngHandle, digamma, log_gamma, log_sum_exp, maximize_1d
from .selection import (
    BicRecord, SelectionReport, bootstrap_selection, default_grid, modified_bic, select_g,
    select_lambda,
)
from .simulate import SimDataset, SimDesign, calibrate_separation, generate

__all__ = [
    "BicRecord", "CalibrationError", "DataMatrix", "DegenerateComponentError", "DomainError",
    "EmConfig", "FitFailure", "FitResult", "LatentExpectations", "MixtureParams", "NumericalError",
    "PenaltyConfig", "PtmixError", "RngHandle", "SelectionError", "SelectionReport", "SimDataset",
    "SimDesign", "ValidationError", "adjusted_rand_index", "bootstrap_selection",
    "calibrate_separation", "default_grid", "digamma", "e_step", "fit", "generate",
    "hard_assignments", "log_gamma", "log_sum_exp", "mahalanobis_sq", "maximize_1d",
    "modified_bic", "penalized_log_likelihood", "sample_t", "select_g", "select_lambda",
    "selection_scores", "standardize", "t_log_pdf",
]
