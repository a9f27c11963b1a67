"""Outlier-resilient QoS prediction toolkit.

Robust matrix and nonnegative tensor factorization with a Cauchy data loss,
plain L2/L1 baselines, isolation-forest outlier exclusion for evaluation,
dataset utilities, and a reproducible experiment harness.
"""

from .data import (
    DatasetMeta,
    ObservationMatrix,
    ObservationTensor,
    SyntheticSpec,
    generate_synthetic,
    parse_dense_matrix,
    parse_quads,
    parse_triples,
)
from .errors import DivergenceError, ParseError
from .experiment import ExperimentConfig, ResultRecord, run_cell, run_grid, split
from .iforest import ForestConfig, ScoredValue, exclusion_mask, fit_score, score_values
from .losses import Loss, cauchy_weight, influence, loss_value
from .metrics import EvalReport, evaluate_excluding_outliers, mae, rmse
from .mf import MfConfig, MfModel
from .ncp import TfConfig, TfModel

__version__ = "0.1.0"

__all__ = [
    "DatasetMeta",
    "DivergenceError",
    "EvalReport",
    "ExperimentConfig",
    "ForestConfig",
    "Loss",
    "MfConfig",
    "MfModel",
    "ObservationMatrix",
    "ObservationTensor",
    "ParseError",
    "ResultRecord",
    "ScoredValue",
    "SyntheticSpec",
    "TfConfig",
    "TfModel",
    "cauchy_weight",
    "evaluate_excluding_outliers",
    "exclusion_mask",
    "fit_score",
    "generate_synthetic",
    "influence",
    "loss_value",
    "mae",
    "parse_dense_matrix",
    "parse_quads",
    "parse_triples",
    "rmse",
    "run_cell",
    "run_grid",
    "score_values",
    "split",
]
