"""Prediction error metrics with optional outlier-excluded evaluation.

Outlier exclusion scores the observed test values (never the residuals), so
every method compared on the same test set is judged on the same retained
subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .iforest import ForestConfig, ScoredValue, exclusion_mask, score_grouped, score_values


@dataclass
class EvalReport:
    mae: float
    rmse: float
    n_total: int
    n_removed: int
    outlier_ratio: float
    method_tag: str = ""


def _paired(observed, predicted):
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if obs.shape != pred.shape or obs.ndim != 1:
        raise ValueError("observed and predicted must be equal-length 1-d sequences")
    if obs.size == 0:
        raise ValueError("cannot evaluate empty sequences")
    return obs, pred


def mae(observed, predicted) -> float:
    """Mean absolute error over all pairs."""
    obs, pred = _paired(observed, predicted)
    return float(np.mean(np.abs(obs - pred)))


def rmse(observed, predicted) -> float:
    """Root mean square error over all pairs."""
    obs, pred = _paired(observed, predicted)
    return float(np.sqrt(np.mean((obs - pred) ** 2)))


def evaluate_excluding_outliers(
    observed,
    predicted,
    outlier_ratio: float,
    forest_config: ForestConfig,
    groups=None,
    method_tag: str = "",
) -> EvalReport:
    """MAE/RMSE over the test pairs left after isolation-forest exclusion.

    The floor(ratio * N) observed values with the highest outlier scores are
    dropped.  When ``groups`` is given (one id per pair, e.g. the service
    index), scores are computed per group with a pooled fallback for tiny
    groups; otherwise the pool is scored as one population.
    """
    obs, pred = _paired(observed, predicted)
    if not 0.0 <= outlier_ratio < 1.0:
        raise ValueError("outlier_ratio must be in [0, 1)")

    if outlier_ratio == 0.0:
        return EvalReport(mae(obs, pred), rmse(obs, pred), obs.size, 0, 0.0, method_tag)

    if groups is None:
        scores = score_values(obs, forest_config)
    else:
        scores = score_grouped(obs, groups, forest_config)
    scored = [ScoredValue(i, float(v), float(s)) for i, (v, s) in enumerate(zip(obs, scores))]
    keep = sorted(exclusion_mask(scored, outlier_ratio))
    return EvalReport(
        mae(obs[keep], pred[keep]),
        rmse(obs[keep], pred[keep]),
        obs.size,
        obs.size - len(keep),
        outlier_ratio,
        method_tag,
    )
