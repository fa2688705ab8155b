"""Dilated causal convolution networks with exact reverse-mode gradients.

The network maps an input window [batch x channels x L] to a same-length
output whose position j is the one-step-ahead prediction for position
j + 1. Channel 0 is always the series itself; any further channels are
covariates. Hidden layers apply ReLU; the output layer is linear so the
network can produce negative values (e.g. on whitened data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CovariateTensor, TimeSeriesMatrix
from .errors import ConfigError, TrainingDivergedError
from .losses import LOSS_GRADS, LOSSES


@dataclass(frozen=True)
class TcnConfig:
    """Architecture of a temporal convolution stack.

    Layer i (1-based) uses dilation 2^(i-1) and left zero-padding of
    (kernel_size - 1) * dilation, so output length equals input length
    and no output position sees future inputs.
    """

    kernel_size: int
    channels: tuple[int, ...]
    input_channels: int = 1
    use_residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.input_channels < 1:
            raise ConfigError(f"input_channels must be >= 1, got {self.input_channels}")

    @property
    def depth(self) -> int:
        return len(self.channels)

    def dilation(self, layer: int) -> int:
        """Dilation of 0-based layer index."""
        return 2**layer

    @property
    def dynamic_range(self) -> int:
        """Number of past points feeding one prediction: 2(k-1)2^(d-1)."""
        return 2 * (self.kernel_size - 1) * 2 ** (self.depth - 1)

    @property
    def lookback(self) -> int:
        return 1 + self.dynamic_range

    @property
    def output_channels(self) -> int:
        return self.channels[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(c_out, c_in) per layer."""
        ins = (self.input_channels,) + self.channels[:-1]
        return list(zip(self.channels, ins))


class TcnNetwork:
    """Weights and biases for a TcnConfig.

    weights[i] has shape [c_out, c_in, k]; biases[i] has shape [c_out].
    With use_residual, skip_weights[i] is a learnable 1x1 projection
    [c_out, c_in] added to the layer output.
    """

    def __init__(self, config: TcnConfig, weights, biases, skip_weights=None):
        self.config = config
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if config.use_residual:
            self.skip_weights = [np.asarray(s, dtype=np.float64) for s in skip_weights]
        else:
            self.skip_weights = [None] * config.depth
        for (c_out, c_in), w, b in zip(config.layer_shapes(), self.weights, self.biases):
            if w.shape != (c_out, c_in, config.kernel_size):
                raise ConfigError(f"weight shape {w.shape} != {(c_out, c_in, config.kernel_size)}")
            if b.shape != (c_out,):
                raise ConfigError(f"bias shape {b.shape} != {(c_out,)}")

    @classmethod
    def random_init(cls, config: TcnConfig, rng: np.random.Generator) -> "TcnNetwork":
        """Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero."""
        weights, biases, skips = [], [], []
        for c_out, c_in in config.layer_shapes():
            bound = 1.0 / math.sqrt(c_in * config.kernel_size)
            weights.append(rng.uniform(-bound, bound, size=(c_out, c_in, config.kernel_size)))
            biases.append(np.zeros(c_out))
            skips.append(rng.uniform(-1.0 / math.sqrt(c_in), 1.0 / math.sqrt(c_in), size=(c_out, c_in)))
        return cls(config, weights, biases, skips if config.use_residual else None)

    def copy(self) -> "TcnNetwork":
        skips = None
        if self.config.use_residual:
            skips = [np.array(s) for s in self.skip_weights]
        return TcnNetwork(
            self.config,
            [np.array(w) for w in self.weights],
            [np.array(b) for b in self.biases],
            skips,
        )

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays = list(self.weights) + list(self.biases)
        if self.config.use_residual:
            arrays += list(self.skip_weights)
        return arrays

    def load_parameters(self, arrays: list[np.ndarray]) -> None:
        d = self.config.depth
        for i in range(d):
            self.weights[i] = np.array(arrays[i])
            self.biases[i] = np.array(arrays[d + i])
        if self.config.use_residual:
            for i in range(d):
                self.skip_weights[i] = np.array(arrays[2 * d + i])


def leveled_init(config: TcnConfig) -> TcnNetwork:
    """Initialize so the untrained net outputs the mean of its input window.

    Every filter weight on series-derived channels is 1 / (k * c_in);
    covariate channels of the input layer get weight 0; all biases are 0.
    For kernel_size 2 and one channel per layer the last output then
    equals the arithmetic mean of the last 2^depth nonnegative inputs.
    Residual projections, when enabled, start at zero so they do not
    disturb the mean property.
    """
    weights, biases, skips = [], [], []
    for i, (c_out, c_in) in enumerate(config.layer_shapes()):
        w = np.zeros((c_out, c_in, config.kernel_size))
        if i == 0:
            # only channel 0 (the series) carries mean information
            w[:, 0, :] = 1.0 / config.kernel_size
        else:
            w[:, :, :] = 1.0 / (config.kernel_size * c_in)
        weights.append(w)
        biases.append(np.zeros(c_out))
        skips.append(np.zeros((c_out, c_in)))
    return TcnNetwork(config, weights, biases, skips if config.use_residual else None)


def _dilated_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int) -> np.ndarray:
    # x: [B, c_in, L]; tap k-1 is aligned with the current position.
    k = w.shape[2]
    length = x.shape[2]
    pad = (k - 1) * dilation
    xp = np.pad(x, ((0, 0), (0, 0), (pad, 0)))
    out = np.zeros((x.shape[0], w.shape[0], length))
    for j in range(k):
        out += np.einsum("oc,bcl->bol", w[:, :, j], xp[:, :, j * dilation : j * dilation + length])
    return out + b[None, :, None]


def _dilated_conv_backward(grad_out, x, w, dilation):
    # Returns (dW, db, dx) for out = conv(x, w) + b.
    k = w.shape[2]
    length = x.shape[2]
    pad = (k - 1) * dilation
    xp = np.pad(x, ((0, 0), (0, 0), (pad, 0)))
    db = grad_out.sum(axis=(0, 2))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for j in range(k):
        sl = slice(j * dilation, j * dilation + length)
        dw[:, :, j] = np.einsum("bol,bcl->oc", grad_out, xp[:, :, sl])
        dxp[:, :, sl] += np.einsum("oc,bol->bcl", w[:, :, j], grad_out)
    return dw, db, dxp[:, :, pad:]


def forward(net: TcnNetwork, window: np.ndarray, caches: list | None = None) -> np.ndarray:
    """Run the network on [B x c_in x L]; returns [B x c_out x L].

    Pure function of (net, window). When ``caches`` is given it is
    filled with per-layer (input, pre-activation) pairs for backward.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"window must be 3-d [batch, channels, length], got {x.shape}")
    if x.shape[1] != net.config.input_channels:
        raise ValueError(
            f"window has {x.shape[1]} channels, network expects {net.config.input_channels}"
        )
    last = net.config.depth - 1
    for i in range(net.config.depth):
        pre = _dilated_conv(x, net.weights[i], net.biases[i], net.config.dilation(i))
        out = pre if i == last else np.maximum(pre, 0.0)
        if net.skip_weights[i] is not None:
            out = out + np.einsum("oc,bcl->bol", net.skip_weights[i], x)
        if caches is not None:
            caches.append((x, pre))
        x = out
    return x


@dataclass
class TcnGradients:
    """Parameter and input gradients matching the network layout."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    skip_weights: list
    input: np.ndarray


def _backward_from_caches(net: TcnNetwork, caches, upstream: np.ndarray) -> TcnGradients:
    depth = net.config.depth
    dws = [None] * depth
    dbs = [None] * depth
    dskips = [None] * depth
    grad = np.asarray(upstream, dtype=np.float64)
    for i in range(depth - 1, -1, -1):
        x, pre = caches[i]
        if grad.shape != pre.shape:
            raise ValueError(f"upstream gradient shape {grad.shape} != {pre.shape}")
        grad_skip_x = 0.0
        if net.skip_weights[i] is not None:
            dskips[i] = np.einsum("bol,bcl->oc", grad, x)
            grad_skip_x = np.einsum("oc,bol->bcl", net.skip_weights[i], grad)
        grad_pre = grad if i == depth - 1 else grad * (pre > 0.0)
        dws[i], dbs[i], dx = _dilated_conv_backward(
            grad_pre, x, net.weights[i], net.config.dilation(i)
        )
        grad = dx + grad_skip_x
    return TcnGradients(dws, dbs, dskips, grad)


def backward(net: TcnNetwork, window: np.ndarray, upstream: np.ndarray) -> TcnGradients:
    """Exact gradients of sum(upstream * forward(net, window)).

    Returns gradients for every weight, bias, and skip projection, plus
    the gradient with respect to the input window (needed when the
    window itself is an optimization variable).
    """
    caches: list = []
    forward(net, window, caches)
    return _backward_from_caches(net, caches, upstream)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings for network training."""

    learning_rate: float = 0.01
    batch_rows: int = 32
    batch_cols: int = 64
    max_epochs: int = 300
    patience: int = 7
    loss: str = "wape"
    seed: int = 0
    val_fraction: float = 0.1
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_rows < 1 or self.batch_cols < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("max_epochs and patience must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    trace: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


class _AdamState:
    """Adaptive-moment updates; optional, excluded from the default path."""

    def __init__(self, arrays, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            a -= self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)


def _flat_grads(net: TcnNetwork, grads: TcnGradients) -> list[np.ndarray]:
    flat = list(grads.weights) + list(grads.biases)
    if net.config.use_residual:
        flat += list(grads.skip_weights)
    return flat


def _apply_sgd(net: TcnNetwork, grads: TcnGradients, lr: float) -> None:
    for w, dw in zip(net.weights, grads.weights):
        w -= lr * dw
    for b, db in zip(net.biases, grads.biases):
        b -= lr * db
    if net.config.use_residual:
        for s, ds in zip(net.skip_weights, grads.skip_weights):
            s -= lr * ds


def assemble_input(series_block: np.ndarray, covariate_block: np.ndarray | None) -> np.ndarray:
    """Stack [B x L] series values with optional [B x r x L] covariates."""
    series_block = np.asarray(series_block, dtype=np.float64)
    stacked = series_block[:, None, :]
    if covariate_block is None:
        return stacked
    return np.concatenate([stacked, covariate_block], axis=1)


def _batch_windows(lookback_cols: int, first: int, last: int, batch_cols: int) -> list[int]:
    # Start positions of target windows [p, p + batch_cols) covering
    # [first, last); every target keeps a full look-back of real data.
    starts = list(range(first, last - batch_cols + 1, batch_cols))
    if not starts:
        return []
    tail = last - batch_cols
    if tail > starts[-1]:
        starts.append(tail)
    return starts


def _one_step_predictions(
    net: TcnNetwork,
    values: np.ndarray,
    covariates: np.ndarray | None,
    rows: np.ndarray,
    start: int,
    stop: int,
) -> np.ndarray:
    """Teacher-forced predictions for target columns [start, stop)."""
    lb = net.config.dynamic_range
    lo = max(start - lb, 0)
    series = values[rows, lo : stop - 1]
    cov = covariates[rows, :, lo : stop - 1] if covariates is not None else None
    out = forward(net, assemble_input(series, cov))
    return out[:, 0, -(stop - start):]


def train(
    net: TcnNetwork,
    data: TimeSeriesMatrix,
    covariates: CovariateTensor | None,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch SGD over row batches and column windows (in place).

    Each batch feeds the dynamic range preceding the target window so
    every position in the loss has a full look-back; the last
    ceil(val_fraction * train_len) training columns are held out for
    early stopping with the configured patience. The best-validation
    parameters are restored on return. Raises TrainingDivergedError if
    the training loss becomes non-finite.
    """
    lb = net.config.dynamic_range
    t_train = data.train_len
    if cfg.batch_cols <= net.config.lookback:
        raise ConfigError(
            f"batch_cols {cfg.batch_cols} must exceed the network look-back {net.config.lookback}"
        )
    if t_train <= net.config.lookback + cfg.batch_cols:
        raise ConfigError(
            f"train_len {t_train} must exceed look-back + batch_cols "
            f"({net.config.lookback} + {cfg.batch_cols})"
        )
    n_val = math.ceil(cfg.val_fraction * t_train)
    fit_end = t_train - n_val
    if fit_end - cfg.batch_cols < lb:
        raise ConfigError(
            f"no full training window: {fit_end} columns left after validation split"
        )

    values = data.values
    cov_values = covariates.expand(data.n_series) if covariates is not None else None
    if cov_values is not None and cov_values.shape[2] < t_train:
        raise ConfigError(
            f"covariates cover {cov_values.shape[2]} steps, need {t_train}"
        )

    loss_grad = LOSS_GRADS[cfg.loss]
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    adam = (
        _AdamState(net.parameter_arrays(), cfg.learning_rate)
        if cfg.optimizer == "adam"
        else None
    )

    window_starts = _batch_windows(lb, lb, fit_end, cfg.batch_cols)
    n = data.n_series
    result = TrainResult()
    best_val = math.inf
    best_params = [np.array(a) for a in net.parameter_arrays()]
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        row_order = rng.permutation(n)
        row_batches = [
            row_order[i : i + cfg.batch_rows] for i in range(0, n, cfg.batch_rows)
        ]
        batches = [(rb, ws) for rb in row_batches for ws in window_starts]
        rng.shuffle(batches)

        epoch_losses = []
        for rows, p in batches:
            rows = np.sort(rows)
            target = values[rows, p : p + cfg.batch_cols]
            series = values[rows, p - lb : p + cfg.batch_cols - 1]
            cov = (
                cov_values[rows, :, p - lb : p + cfg.batch_cols - 1]
                if cov_values is not None
                else None
            )
            window = assemble_input(series, cov)
            caches: list = []
            out = forward(net, window, caches)
            pred = out[:, 0, -cfg.batch_cols :]
            batch_loss, grad_pred = loss_grad(target, pred)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}"
                )
            epoch_losses.append(batch_loss)
            upstream = np.zeros_like(out)
            upstream[:, 0, -cfg.batch_cols :] = grad_pred
            grads = _backward_from_caches(net, caches, upstream)
            if adam is not None:
                adam.step(net.parameter_arrays(), _flat_grads(net, grads))
            else:
                _apply_sgd(net, grads, cfg.learning_rate)

        val_pred = _one_step_predictions(net, values, cov_values, np.arange(n), fit_end, t_train)
        val_loss = loss_fn(values[:, fit_end:t_train], val_pred)
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        result.trace.append(EpochStats(epoch, train_loss, float(val_loss)))

        if val_loss < best_val:
            best_val = val_loss
            best_params = [np.array(a) for a in net.parameter_arrays()]
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break

    net.load_parameters(best_params)
    return result


def rollout_batch(
    net: TcnNetwork,
    histories: np.ndarray,
    steps: int,
    future_covariates: np.ndarray | None = None,
) -> np.ndarray:
    """Autoregressive multi-step forecast for a batch of series.

    histories: [B x c_in x L] with L >= the network dynamic range;
    future_covariates: [B x (c_in - 1) x steps] true future values for
    the covariate channels. Each predicted value is appended to the
    series channel before the next step.
    """
    x = np.asarray(histories, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"histories must be 3-d, got shape {x.shape}")
    lb = max(net.config.dynamic_range, 1)
    if x.shape[2] < lb:
        raise ValueError(
            f"insufficient history: {x.shape[2]} columns, need at least {lb}"
        )
    n_cov = net.config.input_channels - 1
    if n_cov > 0:
        if future_covariates is None:
            raise ValueError(f"network expects {n_cov} covariate channels for future steps")
        future_covariates = np.asarray(future_covariates, dtype=np.float64)
        if future_covariates.shape != (x.shape[0], n_cov, steps):
            raise ValueError(
                f"future covariates shape {future_covariates.shape} != "
                f"{(x.shape[0], n_cov, steps)}"
            )
    batch = x.shape[0]
    if steps == 0:
        return np.zeros((batch, 0))
    buf = np.array(x[:, :, -lb:])
    preds = np.empty((batch, steps))
    for s in range(steps):
        out = forward(net, buf)
        nxt = out[:, 0, -1]
        preds[:, s] = nxt
        col = np.empty((batch, net.config.input_channels, 1))
        col[:, 0, 0] = nxt
        if n_cov > 0:
            col[:, 1:, 0] = future_covariates[:, :, s]
        buf = np.concatenate([buf[:, :, 1:], col], axis=2)
    return preds


def rollout(
    net: TcnNetwork,
    history: np.ndarray,
    steps: int,
    future_covariates: np.ndarray | None = None,
) -> np.ndarray:
    """Single-series wrapper around rollout_batch; history is [c_in x L] or [L]."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim == 1:
        history = history[None, :]
    fc = future_covariates[None, ...] if future_covariates is not None else None
    return rollout_batch(net, history[None, ...], steps, fc)[0]
