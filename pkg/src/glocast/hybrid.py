"""Hybrid forecaster combining the factorization's global view with a
local network.

In the default covariate mode the local network consumes the raw
series, the global model's prediction as an extra covariate channel,
and the original covariates (channel layout: series, global prediction,
covariates). The alternative attention mode blends independent global
and local forecasts elementwise with weights emitted by a third
network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CovariateTensor, TimeSeriesMatrix
from .errors import ConfigError, TrainingDivergedError
from .losses import LOSS_GRADS, LOSSES
from . import tcn
from .factorization import FactorModel, TcnMfConfig, fit as fit_factors
from .factorization import predict_global, rolling_update
from .tcn import (
    EpochStats,
    TcnConfig,
    TcnNetwork,
    TrainConfig,
    TrainResult,
    assemble_input,
    forward,
    leveled_init,
    rollout_batch,
)

COMBINERS = ("covariate", "attention")


@dataclass
class DeepGloModel:
    """Fitted hybrid model plus the observed history it forecasts from."""

    global_model: FactorModel
    hybrid_net: TcnNetwork
    combiner: str
    attention_net: TcnNetwork | None
    history: np.ndarray
    covariates: CovariateTensor | None
    train_result: TrainResult | None = None

    @property
    def n_series(self) -> int:
        return self.history.shape[0]

    @property
    def history_len(self) -> int:
        return self.history.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.n_channels if self.covariates is not None else 0


def build_hybrid_covariates(
    data: TimeSeriesMatrix,
    covariates: CovariateTensor | None,
    global_model: FactorModel,
) -> CovariateTensor:
    """Channel 1 is the global model's in-range prediction (loadings @
    basis over the training columns); the original covariates follow."""
    t = data.train_len
    if global_model.basis.shape[1] < t:
        raise ValueError(
            f"global model covers {global_model.basis.shape[1]} columns, need {t}"
        )
    recon = global_model.loadings @ global_model.basis[:, :t]
    parts = [recon[:, None, :]]
    if covariates is not None:
        parts.append(covariates.expand(data.n_series)[:, :, :t])
    return CovariateTensor(np.concatenate(parts, axis=1))


def fit_deepglo(
    data: TimeSeriesMatrix,
    covariates: CovariateTensor | None,
    factor_cfg: TcnMfConfig,
    train_cfg: TrainConfig,
    kernel_size: int = 7,
    channels: tuple[int, ...] = (32, 32, 32, 32, 32, 1),
    combiner: str = "covariate",
    attention_channels: tuple[int, ...] = (16, 16, 2),
    attention_train_cfg: TrainConfig | None = None,
) -> DeepGloModel:
    """Fit the global factorization, then the local network on top of it.

    Covariate mode trains the local network with the global prediction
    injected as the first covariate channel (r + 2 inputs in total).
    Attention mode trains a plain local network (series + covariates)
    and then the attention combiner with everything else frozen.
    """
    if combiner not in COMBINERS:
        raise ConfigError(f"combiner must be one of {COMBINERS}, got {combiner!r}")
    global_model = fit_factors(data, factor_cfg, train_cfg)
    r = covariates.n_channels if covariates is not None else 0

    if combiner == "covariate":
        hybrid_cov = build_hybrid_covariates(data, covariates, global_model)
        net = leveled_init(TcnConfig(kernel_size, channels, input_channels=r + 2))
        result = tcn.train(net, data, hybrid_cov, train_cfg)
        attention_net = None
    else:
        net = leveled_init(TcnConfig(kernel_size, channels, input_channels=r + 1))
        result = tcn.train(net, data, covariates, train_cfg)
        rng = np.random.default_rng(train_cfg.seed + 7919)
        attention_net = TcnNetwork.random_init(
            TcnConfig(kernel_size, attention_channels, input_channels=1), rng
        )

    model = DeepGloModel(
        global_model=global_model,
        hybrid_net=net,
        combiner=combiner,
        attention_net=attention_net,
        history=np.array(data.train_values),
        covariates=covariates,
        train_result=result,
    )
    if combiner == "attention":
        fit_attention(model, data, attention_train_cfg or train_cfg)
    return model


def fit_attention(model: DeepGloModel, data: TimeSeriesMatrix, cfg: TrainConfig) -> TrainResult:
    """Train only the attention network on the blended prediction loss.

    Per batch, the blend is global_reconstruction * A_g + local * A_l
    with the weights read from the attention network's two output
    channels; the loadings, basis, temporal network, and local network
    all stay frozen.
    """
    if model.attention_net is None:
        raise ConfigError("model has no attention network (combiner is covariate)")
    att = model.attention_net
    local = model.hybrid_net
    lb = max(att.config.dynamic_range, local.config.dynamic_range)
    t_train = data.train_len
    if cfg.batch_cols <= max(att.config.lookback, local.config.lookback):
        raise ConfigError("batch_cols must exceed the largest look-back")
    n_val = math.ceil(cfg.val_fraction * t_train)
    fit_end = t_train - n_val
    if fit_end - cfg.batch_cols < lb:
        raise ConfigError("training range too short for attention training")

    values = data.values
    cov_values = (
        model.covariates.expand(data.n_series) if model.covariates is not None else None
    )
    recon = model.global_model.loadings @ model.global_model.basis[:, :t_train]
    loss_grad = LOSS_GRADS[cfg.loss]
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    window_starts = tcn._batch_windows(lb, lb, fit_end, cfg.batch_cols)
    n = data.n_series
    result = TrainResult()
    best_val = math.inf
    best_params = [np.array(a) for a in att.parameter_arrays()]
    stale = 0

    def blended(rows, start, stop):
        width = stop - start
        att_in = values[rows, start - att.config.dynamic_range : stop - 1][:, None, :]
        weights = forward(model.attention_net, att_in)[:, :, -width:]
        lo = start - local.config.dynamic_range
        cov = cov_values[rows, :, lo : stop - 1] if cov_values is not None else None
        local_out = forward(local, assemble_input(values[rows, lo : stop - 1], cov))
        local_pred = local_out[:, 0, -width:]
        global_pred = recon[rows, start:stop]
        pred = global_pred * weights[:, 0] + local_pred * weights[:, 1]
        return pred, global_pred, local_pred, weights

    for epoch in range(1, cfg.max_epochs + 1):
        row_order = rng.permutation(n)
        row_batches = [row_order[i : i + cfg.batch_rows] for i in range(0, n, cfg.batch_rows)]
        batches = [(rb, ws) for rb in row_batches for ws in window_starts]
        rng.shuffle(batches)

        epoch_losses = []
        for rows, p in batches:
            rows = np.sort(rows)
            stop = p + cfg.batch_cols
            target = values[rows, p:stop]
            att_in = values[rows, p - att.config.dynamic_range : stop - 1][:, None, :]
            caches: list = []
            att_out = forward(att, att_in, caches)
            weights = att_out[:, :, -cfg.batch_cols :]
            lo = p - local.config.dynamic_range
            cov = cov_values[rows, :, lo : stop - 1] if cov_values is not None else None
            local_pred = forward(local, assemble_input(values[rows, lo : stop - 1], cov))[
                :, 0, -cfg.batch_cols :
            ]
            global_pred = recon[rows, p:stop]
            pred = global_pred * weights[:, 0] + local_pred * weights[:, 1]
            batch_loss, g_pred = loss_grad(target, pred)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"attention training loss became non-finite at epoch {epoch}"
                )
            epoch_losses.append(batch_loss)
            upstream = np.zeros_like(att_out)
            upstream[:, 0, -cfg.batch_cols :] = g_pred * global_pred
            upstream[:, 1, -cfg.batch_cols :] = g_pred * local_pred
            grads = tcn._backward_from_caches(att, caches, upstream)
            tcn._apply_sgd(att, grads, cfg.learning_rate)

        val_pred, _, _, _ = blended(np.arange(n), fit_end, t_train)
        val_loss = loss_fn(values[:, fit_end:t_train], val_pred)
        result.trace.append(
            EpochStats(epoch, float(np.mean(epoch_losses)) if epoch_losses else math.nan, float(val_loss))
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = [np.array(a) for a in att.parameter_arrays()]
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break

    att.load_parameters(best_params)
    return result


def _future_covariate_slices(model: DeepGloModel, steps: int) -> np.ndarray | None:
    if model.covariates is None:
        return None
    t_cur = model.history_len
    if model.covariates.total_len < t_cur + steps:
        raise ValueError(
            f"covariates cover {model.covariates.total_len} steps, "
            f"need {t_cur + steps} for this forecast"
        )
    return model.covariates.expand(model.n_series)[:, :, t_cur : t_cur + steps]


def predict_deepglo(model: DeepGloModel, steps: int) -> np.ndarray:
    """Multi-step forecast in the combiner's mode."""
    preds, _, _ = predict_deepglo_components(model, steps)
    return preds


def predict_deepglo_components(
    model: DeepGloModel, steps: int
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Forecast plus the component forecasts that produced it.

    Returns (prediction, global_component, local_component); the local
    component is only separable in attention mode.
    """
    if steps == 0:
        empty = np.zeros((model.n_series, 0))
        return empty, None, None
    global_future = predict_global(model.global_model, steps)
    z_future = _future_covariate_slices(model, steps)

    if model.combiner == "covariate":
        t_cur = model.history_len
        recon = model.global_model.loadings @ model.global_model.basis[:, :t_cur]
        parts = [model.history[:, None, :], recon[:, None, :]]
        if model.covariates is not None:
            parts.append(model.covariates.expand(model.n_series)[:, :, :t_cur])
        hist = np.concatenate(parts, axis=1)
        fut = global_future[:, None, :]
        if z_future is not None:
            fut = np.concatenate([fut, z_future], axis=1)
        preds = rollout_batch(model.hybrid_net, hist, steps, fut)
        return preds, global_future, None

    # attention mode: global and local roll out independently, the
    # attention network reads the blended history
    local_hist = model.history[:, None, :]
    if model.covariates is not None:
        local_hist = np.concatenate(
            [local_hist, model.covariates.expand(model.n_series)[:, :, : model.history_len]],
            axis=1,
        )
    local_future = rollout_batch(model.hybrid_net, local_hist, steps, z_future)

    att = model.attention_net
    a_lb = max(att.config.dynamic_range, 1)
    buf = np.array(model.history[:, -a_lb:])
    preds = np.empty((model.n_series, steps))
    for s in range(steps):
        weights = forward(att, buf[:, None, :])[:, :, -1]
        preds[:, s] = global_future[:, s] * weights[:, 0] + local_future[:, s] * weights[:, 1]
        buf = np.concatenate([buf[:, 1:], preds[:, s : s + 1]], axis=1)
    return preds, global_future, local_future


def incorporate_block(model: DeepGloModel, block: np.ndarray):
    """Reveal a block of actual values: extend the basis through a
    rolling update (loadings and networks untouched) and append the
    block to the observed history."""
    block = np.asarray(block, dtype=np.float64)
    info = rolling_update(model.global_model, block)
    model.history = np.concatenate([model.history, block], axis=1)
    return info
