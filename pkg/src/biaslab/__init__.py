"""Sampling-bias laboratory for credit scorecards: simulation, reject inference and evaluation."""
__version__ = "0.1.0"

from .data import (UNKNOWN, CsvSchema, DataError, Dataset, RngSeed, Split, bootstrap,
                   concat, load_csv, partition, write_csv)
from .synth import (Component, MixtureSpec, MnarSpec, apply_mnar, default_mixture, random_covariance,
                    sample_applicants)
from .metrics import MetricSpec, MetricUndefined, MetricValue, abr, auc, brier, mmd, pauc
from .bayes import BayesConfig, Prior, bayesian_metric, build_prior, constant_prior, corrupt_prior
from .basl import BaslConfig, basl_fit, filter_rejects
from .benchmarks import CorrectionMethod, banded_weights, heckman_two_step, train_corrected
from .loop import LoopConfig, run_loop, sensitivity_sweep
from .experiments import (LoanEconomics, RunConfig, RunReport, business_impact, emit_report,
                          experiment_evaluation, experiment_training, policy_selection)
