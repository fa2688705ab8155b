"""Training losses with analytic gradients w.r.t. the predictions."""

from __future__ import annotations

import numpy as np

# Guards against all-zero targets inside a mini-batch; the evaluation
# metrics in metrics.py treat that case as an error instead.
_DENOM_FLOOR = 1e-12


def wape_loss(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Sum of absolute errors over sum of absolute actuals."""
    denom = max(np.abs(actual).sum(), _DENOM_FLOOR)
    return float(np.abs(actual - predicted).sum() / denom)


def wape_loss_grad(actual, predicted) -> tuple[float, np.ndarray]:
    """WAPE and its gradient w.r.t. predicted; subgradient 0 at the kink."""
    denom = max(np.abs(actual).sum(), _DENOM_FLOOR)
    diff = predicted - actual
    return float(np.abs(diff).sum() / denom), np.sign(diff) / denom


def squared_loss(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean squared error over all entries."""
    diff = actual - predicted
    return float((diff * diff).mean())


def squared_loss_grad(actual, predicted) -> tuple[float, np.ndarray]:
    diff = predicted - actual
    return float((diff * diff).mean()), (2.0 / diff.size) * diff


LOSS_GRADS = {"wape": wape_loss_grad, "squared": squared_loss_grad}
LOSSES = {"wape": wape_loss, "squared": squared_loss}
