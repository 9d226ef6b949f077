"""Multivariate convex regression by ADMM, with Lipschitz and monotone variants,
smooth surrogates with certified accuracy, and cross-validated tuning."""

__version__ = "0.1.0"

from .admm import AlmSchedule, ConvergenceTrace, SolverConfig, SolverState, fit, fit_admm, fit_alm
from .data import Dataset, StandardizationInfo, read_csv, standardize, write_csv
from .errors import (ConfigurationError, CvxRegError, DegenerateInputError, FitError, InputError,
                     NumericalFault)
from .model import (OUTSIDE_HULL, KktReport, PwaModel, Variant, destandardize_model, eval_canonical,
                    eval_max_rule, load_model, predict, predict_max_rule, save_model)
from .selection import CvResult, cross_validate_L, default_grid, risk_profile
from .smoothing import SmoothModel, SmoothingCertificate, bias_correct, eval_smooth, make_smooth
from .synthetic import generate
from .variants import fit_variant, solve_ball_ls, solve_nnls_cd

__all__ = [
    "AlmSchedule", "ConvergenceTrace", "SolverConfig", "SolverState", "fit", "fit_admm", "fit_alm",
    "Dataset", "StandardizationInfo", "read_csv", "standardize", "write_csv",
    "ConfigurationError", "CvxRegError", "DegenerateInputError", "FitError", "InputError", "NumericalFault",
    "OUTSIDE_HULL", "KktReport", "PwaModel", "Variant", "destandardize_model", "eval_canonical",
    "eval_max_rule", "load_model", "predict", "predict_max_rule", "save_model",
    "CvResult", "cross_validate_L", "default_grid", "risk_profile",
    "SmoothModel", "SmoothingCertificate", "bias_correct", "eval_smooth", "make_smooth",
    "generate", "fit_variant", "solve_ball_ls", "solve_nnls_cd",
]
