"""Forecast accuracy metrics, computed on the original data scale."""

from __future__ import annotations

import numpy as np


def _check_shapes(actual, predicted):
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ValueError(f"shape mismatch: {actual.shape} vs {predicted.shape}")
    return actual, predicted


def wape(actual, predicted) -> float:
    """Sum of absolute errors over sum of absolute actuals."""
    actual, predicted = _check_shapes(actual, predicted)
    denom = np.abs(actual).sum()
    if denom == 0:
        raise ValueError("WAPE undefined: all observations are zero")
    return float(np.abs(actual - predicted).sum() / denom)


def mape(actual, predicted) -> float:
    """Mean of |error| / |actual| over cells with nonzero actuals."""
    actual, predicted = _check_shapes(actual, predicted)
    mask = np.abs(actual) > 0
    if not mask.any():
        raise ValueError("MAPE undefined: all observations are zero")
    return float((np.abs(actual - predicted)[mask] / np.abs(actual)[mask]).mean())


def smape(actual, predicted) -> float:
    """Mean of 2|error| / |actual + predicted| over cells with nonzero
    actuals; cells where actual + predicted is zero are excluded."""
    actual, predicted = _check_shapes(actual, predicted)
    mask = (np.abs(actual) > 0) & (np.abs(actual + predicted) > 0)
    if not mask.any():
        raise ValueError("SMAPE undefined: no valid cells")
    num = 2.0 * np.abs(actual - predicted)[mask]
    return float((num / np.abs(actual + predicted)[mask]).mean())


def mae_rmse(actual, predicted) -> tuple[float, float]:
    """Mean absolute error and root mean squared error."""
    actual, predicted = _check_shapes(actual, predicted)
    diff = actual - predicted
    return float(np.abs(diff).mean()), float(np.sqrt((diff * diff).mean()))


def metric_report(actual, predicted) -> dict[str, float]:
    """All metrics as a dict; percent metrics degrade to NaN when undefined."""
    out = {}
    for name, fn in (("wape", wape), ("mape", mape), ("smape", smape)):
        try:
            out[name] = fn(actual, predicted)
        except ValueError:
            out[name] = float("nan")
    out["mae"], out["rmse"] = mae_rmse(actual, predicted)
    return out
