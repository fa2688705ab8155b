"""Twin-network forecaster: one block predicts a forward rolling mean,
the other the residual around it, trained concurrently on raw data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import TimeSeriesMatrix
from .errors import ConfigError, TrainingDivergedError
from .losses import LOSS_GRADS, LOSSES
from .tcn import (
    TcnConfig,
    TcnNetwork,
    TrainConfig,
    TrainResult,
    EpochStats,
    _apply_sgd,
    _backward_from_caches,
    _batch_windows,
    assemble_input,
    forward,
)


def residual_init(config: TcnConfig, rng: np.random.Generator) -> TcnNetwork:
    """Random hidden layers with a zeroed output layer.

    The block then contributes exactly nothing at the start (the
    combined prediction equals the mean block alone) while the nonzero
    hidden activations keep the output layer trainable.
    """
    net = TcnNetwork.random_init(config, rng)
    net.weights[-1][...] = 0.0
    net.biases[-1][...] = 0.0
    if config.use_residual:
        net.skip_weights[-1][...] = 0.0
    return net


@dataclass
class DlnNetwork:
    """Mean and residual convolution stacks with a shared look-back."""

    mean_net: TcnNetwork
    residual_net: TcnNetwork
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.mean_net.config.lookback != self.residual_net.config.lookback:
            raise ConfigError(
                "mean and residual networks must share the same look-back, got "
                f"{self.mean_net.config.lookback} and {self.residual_net.config.lookback}"
            )

    @property
    def lookback(self) -> int:
        return self.mean_net.config.lookback

    @property
    def dynamic_range(self) -> int:
        return self.mean_net.config.dynamic_range


def dln_forward(dln: DlnNetwork, window: np.ndarray) -> np.ndarray:
    """Elementwise sum of the mean and residual network outputs."""
    return forward(dln.mean_net, window) + forward(dln.residual_net, window)


def rolling_mean_targets(values: np.ndarray, positions: np.ndarray, window: int) -> np.ndarray:
    """Mean of the ``window`` values after each position: mean(y[p+1 .. p+w]).

    Positions must leave at least ``window`` future points in ``values``.
    """
    positions = np.asarray(positions)
    if (positions + window >= values.shape[1]).any():
        raise ValueError("rolling-mean target would run past the series end")
    out = np.zeros((values.shape[0], len(positions)))
    for s in range(1, window + 1):
        out += values[:, positions + s]
    return out / window


def dln_train(dln: DlnNetwork, data: TimeSeriesMatrix, cfg: TrainConfig) -> TrainResult:
    """Concurrent mini-batch training of both blocks.

    Per batch the mean block is updated against forward rolling-mean
    targets; the residual block is then updated against the loss of the
    combined prediction with the mean block held fixed. Target windows
    without a full set of future points for the rolling mean are not
    sampled.
    """
    lb = dln.dynamic_range
    t_train = data.train_len
    if cfg.batch_cols <= dln.lookback:
        raise ConfigError(
            f"batch_cols {cfg.batch_cols} must exceed the look-back {dln.lookback}"
        )
    n_val = math.ceil(cfg.val_fraction * t_train)
    fit_end = t_train - n_val - dln.window  # leave room for rolling-mean targets
    if fit_end - cfg.batch_cols < lb:
        raise ConfigError(
            f"train_len {t_train} too short for look-back {lb}, batch_cols "
            f"{cfg.batch_cols}, window {dln.window}, and validation split"
        )

    values = data.values
    loss_grad = LOSS_GRADS[cfg.loss]
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    window_starts = _batch_windows(lb, lb, fit_end, cfg.batch_cols)
    n = data.n_series
    result = TrainResult()
    best_val = math.inf
    best_params = [
        [np.array(a) for a in dln.mean_net.parameter_arrays()],
        [np.array(a) for a in dln.residual_net.parameter_arrays()],
    ]
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        row_order = rng.permutation(n)
        row_batches = [row_order[i : i + cfg.batch_rows] for i in range(0, n, cfg.batch_rows)]
        batches = [(rb, ws) for rb in row_batches for ws in window_starts]
        rng.shuffle(batches)

        epoch_losses = []
        for rows, p in batches:
            rows = np.sort(rows)
            positions = np.arange(p, p + cfg.batch_cols)
            window = assemble_input(values[rows, p - lb : p + cfg.batch_cols - 1], None)
            mean_targets = rolling_mean_targets(values[rows], positions - 1, dln.window)
            series_targets = values[rows, p : p + cfg.batch_cols]

            mean_caches: list = []
            mean_out = forward(dln.mean_net, window, mean_caches)
            mean_pred = mean_out[:, 0, -cfg.batch_cols :]
            mean_loss, g_mean = loss_grad(mean_targets, mean_pred)

            resid_caches: list = []
            resid_out = forward(dln.residual_net, window, resid_caches)
            resid_pred = resid_out[:, 0, -cfg.batch_cols :]
            total_loss, g_total = loss_grad(series_targets, mean_pred + resid_pred)
            if not (math.isfinite(mean_loss) and math.isfinite(total_loss)):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}"
                )
            epoch_losses.append(total_loss)

            upstream = np.zeros_like(mean_out)
            upstream[:, 0, -cfg.batch_cols :] = g_mean
            _apply_sgd(
                dln.mean_net,
                _backward_from_caches(dln.mean_net, mean_caches, upstream),
                cfg.learning_rate,
            )
            # mean block held fixed: only the residual path is differentiated
            upstream = np.zeros_like(resid_out)
            upstream[:, 0, -cfg.batch_cols :] = g_total
            _apply_sgd(
                dln.residual_net,
                _backward_from_caches(dln.residual_net, resid_caches, upstream),
                cfg.learning_rate,
            )

        val_lo = t_train - n_val
        window = assemble_input(values[:, val_lo - lb : t_train - 1], None)
        val_pred = dln_forward(dln, window)[:, 0, -n_val:]
        val_loss = loss_fn(values[:, val_lo:t_train], val_pred)
        result.trace.append(
            EpochStats(epoch, float(np.mean(epoch_losses)) if epoch_losses else math.nan, float(val_loss))
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = [
                [np.array(a) for a in dln.mean_net.parameter_arrays()],
                [np.array(a) for a in dln.residual_net.parameter_arrays()],
            ]
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break

    dln.mean_net.load_parameters(best_params[0])
    dln.residual_net.load_parameters(best_params[1])
    return result


def dln_rollout(dln: DlnNetwork, history: np.ndarray, steps: int) -> np.ndarray:
    """Autoregressive forecast feeding combined predictions back in."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[None, :]
    return dln_rollout_batch(dln, history[:, None, :], steps)[0]


def dln_rollout_batch(dln: DlnNetwork, histories: np.ndarray, steps: int) -> np.ndarray:
    x = np.asarray(histories, dtype=np.float64)
    lb = max(dln.dynamic_range, 1)
    if x.shape[2] < lb:
        raise ValueError(f"insufficient history: {x.shape[2]} columns, need {lb}")
    if steps == 0:
        return np.zeros((x.shape[0], 0))
    buf = np.array(x[:, :, -lb:])
    preds = np.empty((x.shape[0], steps))
    for s in range(steps):
        nxt = dln_forward(dln, buf)[:, 0, -1]
        preds[:, s] = nxt
        buf = np.concatenate([buf[:, :, 1:], nxt[:, None, None]], axis=2)
    return preds
