"""Learners behind one ``predict_proba`` contract."""
from .base import (FitOptions, GbtParams, LearnerError, Scorecard, constant_scorecard,
                   load_scorecard, predict_proba, save_scorecard, scorecard_from_json,
                   scorecard_to_json)
from .gbt import fit_gbt, staged_loss, weighted_log_loss
from .iforest import NoveltyModel, average_path_length, fit_isolation_forest
from .linear import (fit_l1_logistic, fit_probit, inverse_mills, l1_logistic_objective,
                     probit_index, probit_raw_coefficients, select_l1_lambda,
                     surrogate_coefficients)

__all__ = [
    "FitOptions", "GbtParams", "LearnerError", "Scorecard", "constant_scorecard",
    "load_scorecard", "predict_proba", "save_scorecard", "scorecard_from_json",
    "scorecard_to_json", "fit_gbt", "staged_loss", "weighted_log_loss", "NoveltyModel",
    "average_path_length", "fit_isolation_forest", "fit_l1_logistic", "fit_probit",
    "inverse_mills", "l1_logistic_objective", "probit_index", "probit_raw_coefficients",
    "select_l1_lambda", "surrogate_coefficients",
]
