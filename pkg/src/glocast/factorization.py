"""Low-rank factorization with a temporal-convolution regularizer.

The training matrix is approximated as loadings @ basis where the basis
rows are encouraged to be one-step predictable by a shared
single-channel network. The network sees each basis row independently,
so the regularizer is invariant to consistent row permutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TimeSeriesMatrix
from .errors import ConfigError, TrainingDivergedError
from .losses import wape_loss_grad
from . import tcn
from .tcn import TcnConfig, TcnNetwork, TrainConfig, forward, leveled_init, rollout_batch

ROLLING_OBJECTIVES = ("global_loss_argmin", "alpha_hybrid")


@dataclass(frozen=True)
class TcnMfConfig:
    """Hyperparameters of the factorization and its rolling updates."""

    rank: int = 64
    lambda_t: float = 0.2
    alpha: float = 0.2
    iters_init: int = 10
    iters_train: int = 10
    iters_alt: int = 5
    factor_lr: float = 1.0
    factor_batch_rows: int = 0  # 0 = all rows in one batch
    factor_batch_cols: int = 0  # 0 = all columns in one tile
    rolling_objective: str = "global_loss_argmin"
    rolling_lr: float = 0.05
    rolling_max_iters: int = 300
    rolling_tol: float = 1e-9
    reg_full_context: bool = True
    net_kernel_size: int = 7
    net_channels: tuple[int, ...] = (32, 32, 32, 32, 32, 1)

    def __post_init__(self):
        object.__setattr__(self, "net_channels", tuple(int(c) for c in self.net_channels))
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.lambda_t < 0:
            raise ConfigError(f"lambda_t must be >= 0, got {self.lambda_t}")
        # 1 is allowed so the degenerate pure-forecast blend stays testable
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.rolling_objective not in ROLLING_OBJECTIVES:
            raise ConfigError(
                f"rolling_objective must be one of {ROLLING_OBJECTIVES}, "
                f"got {self.rolling_objective!r}"
            )
        if min(self.iters_init, self.iters_train, self.iters_alt) < 0:
            raise ConfigError("iteration counts must be >= 0")

    def network_config(self) -> TcnConfig:
        return TcnConfig(self.net_kernel_size, self.net_channels, input_channels=1)


@dataclass
class FactorModel:
    """Loadings [n x k], basis [k x t] (grows during rolling), and the
    temporal regularizer network applied row-wise to the basis."""

    loadings: np.ndarray
    basis: np.ndarray
    net: TcnNetwork
    config: TcnMfConfig
    loss_trace: list[tuple[str, float]] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    @property
    def n_series(self) -> int:
        return self.loadings.shape[0]


def _one_step_basis_preds(net, basis, caches=None):
    # predictions for columns 1 .. t-1 given columns 0 .. t-2
    out = forward(net, basis[:, None, :-1], caches)
    return out[:, 0, :]


def _reg_start(net: TcnNetwork, t: int, full_context: bool) -> int:
    # first 0-based target column of the regularizer sum; falls back to
    # column 1 when the matrix is too short for any full look-back window
    if full_context and net.config.lookback < t:
        return net.config.lookback
    return 1


def temporal_reg(basis: np.ndarray, net: TcnNetwork, full_context: bool = True) -> float:
    """One-step predictability penalty (1/|J|) * L2(X[:, J], net(X[:, J-1])).

    With full_context the sum starts at the first column whose
    prediction has a complete look-back; otherwise it starts at column 2
    (1-based) and early predictions see zero padding. L2 is the mean
    squared error over the compared entries. The regularization weight
    is applied by global_loss, not here.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[1] < 2:
        raise ValueError("temporal_reg needs a basis with at least 2 columns")
    t = basis.shape[1]
    start = _reg_start(net, t, full_context)
    preds = _one_step_basis_preds(net, basis)
    diff = basis[:, start:] - preds[:, start - 1 :]
    n_cols = t - start
    return float((diff * diff).mean() / n_cols)


def global_loss(
    y_block: np.ndarray,
    loadings: np.ndarray,
    basis: np.ndarray,
    net: TcnNetwork | None,
    lambda_t: float,
    full_context: bool = True,
) -> float:
    """Reconstruction MSE plus lambda_t times the temporal penalty."""
    y_block = np.asarray(y_block, dtype=np.float64)
    recon = loadings @ basis
    if recon.shape != y_block.shape:
        raise ValueError(f"reconstruction shape {recon.shape} != data shape {y_block.shape}")
    loss = float(((y_block - recon) ** 2).mean())
    if lambda_t != 0.0:
        loss += lambda_t * temporal_reg(basis, net, full_context)
    return loss


def global_loss_grads(
    y_block: np.ndarray,
    loadings: np.ndarray,
    basis: np.ndarray,
    net: TcnNetwork | None,
    lambda_t: float,
    full_context: bool = True,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus exact gradients w.r.t. loadings and basis.

    The basis gradient flows through the reconstruction term, through
    the regularizer targets, and through the network inputs via the
    convolution backward pass.
    """
    y_block = np.asarray(y_block, dtype=np.float64)
    resid = loadings @ basis - y_block
    size = y_block.size
    loss = float((resid * resid).mean())
    d_loadings = (2.0 / size) * resid @ basis.T
    d_basis = (2.0 / size) * loadings.T @ resid
    if lambda_t != 0.0:
        t = basis.shape[1]
        start = _reg_start(net, t, full_context)
        caches: list = []
        preds = _one_step_basis_preds(net, basis, caches)
        diff = basis[:, start:] - preds[:, start - 1 :]
        n_cols = t - start
        scale = 2.0 / (diff.size * n_cols)
        loss += lambda_t * float((diff * diff).mean() / n_cols)
        d_basis[:, start:] += lambda_t * scale * diff
        upstream = np.zeros((basis.shape[0], 1, t - 1))
        upstream[:, 0, start - 1 :] = -lambda_t * scale * diff
        grads = tcn._backward_from_caches(net, caches, upstream)
        d_basis[:, : t - 1] += grads.input[:, 0, :]
    return loss, d_loadings, d_basis


def _column_tiles(t: int, width: int) -> list[tuple[int, int]]:
    return [(s, min(s + width, t)) for s in range(0, t, max(width, 1))]


def factor_epoch(
    model: FactorModel,
    data: TimeSeriesMatrix,
    lr: float | None = None,
    batch_rows: int = 0,
    batch_cols: int = 0,
    rng: np.random.Generator | None = None,
) -> None:
    """One epoch of alternating gradient steps on the factors.

    Batches (rows, column tile) cover the training range; per batch the
    basis columns are updated first, then the loadings rows, each with
    the gradient of the batch-local global loss. The network is fixed.
    Batch sizes of 0 take the whole range in one step, making the epoch
    a deterministic full-gradient update.
    """
    if lr is None:
        lr = model.config.factor_lr
    rng = rng or np.random.default_rng(0)
    values = data.train_values
    n, t = values.shape
    lam = model.config.lambda_t
    lb = model.net.config.dynamic_range
    full_context = model.config.reg_full_context
    batch_rows = batch_rows if batch_rows > 0 else n
    batch_cols = batch_cols if batch_cols > 0 else t

    row_order = rng.permutation(n)
    row_batches = [row_order[i : i + batch_rows] for i in range(0, n, batch_rows)]
    tiles = _column_tiles(t, batch_cols)
    batches = [(rb, tile) for rb in row_batches for tile in tiles]
    rng.shuffle(batches)

    start_policy = _reg_start(model.net, t, full_context)
    for rows, (s, e) in batches:
        rows = np.sort(rows)
        y_b = values[rows, s:e]
        f_b = model.loadings[rows]
        x_b = model.basis[:, s:e]
        size = y_b.size
        resid = f_b @ x_b - y_b
        d_x = (2.0 / size) * f_b.T @ resid

        ts = max(s, start_policy)
        if lam != 0.0 and ts < e:
            lo = max(s - lb, 0)
            caches: list = []
            out = forward(model.net, model.basis[:, None, lo : e - 1], caches)
            preds = out[:, 0, :]
            diff = model.basis[:, ts:e] - preds[:, ts - lo - 1 :]
            n_cols = e - ts
            scale = 2.0 / (diff.size * n_cols)
            d_x[:, ts - s :] += lam * scale * diff
            upstream = np.zeros_like(out)
            upstream[:, 0, ts - lo - 1 :] = -lam * scale * diff
            g_in = tcn._backward_from_caches(model.net, caches, upstream).input[:, 0, :]
            # only columns inside the tile are free; context stays fixed
            d_x[:, : e - 1 - s] += g_in[:, s - lo :]

        model.basis[:, s:e] -= lr * d_x

        resid = model.loadings[rows] @ model.basis[:, s:e] - y_b
        d_f = (2.0 / size) * resid @ model.basis[:, s:e].T
        model.loadings[rows] -= lr * d_f


def _fit_loss(model: FactorModel, values: np.ndarray) -> float:
    return global_loss(
        values,
        model.loadings,
        model.basis,
        model.net,
        model.config.lambda_t,
        model.config.reg_full_context,
    )


class _FactorPhase:
    """Runs factor epochs with a halve-and-retry step-size backoff so the
    recorded loss never increases; the halved rate persists."""

    def __init__(self, model, data, rng):
        self.model = model
        self.data = data
        self.rng = rng
        self.lr = model.config.factor_lr
        self.current = _fit_loss(model, data.train_values)
        if not math.isfinite(self.current):
            raise TrainingDivergedError("initial factorization loss is non-finite")

    def _snapshot(self):
        return np.array(self.model.loadings), np.array(self.model.basis)

    def _restore(self, snap):
        self.model.loadings[...] = snap[0]
        self.model.basis[...] = snap[1]

    def _attempt(self, lr, snap) -> bool:
        cfg = self.model.config
        factor_epoch(
            self.model,
            self.data,
            lr=lr,
            batch_rows=cfg.factor_batch_rows,
            batch_cols=cfg.factor_batch_cols,
            rng=self.rng,
        )
        loss = _fit_loss(self.model, self.data.train_values)
        if math.isfinite(loss) and loss <= self.current:
            self.current = loss
            return True
        self._restore(snap)
        return False

    def run(self, phase: str, epochs: int) -> None:
        for _ in range(epochs):
            snap = self._snapshot()
            if not self._attempt(self.lr, snap) and not self._attempt(self.lr * 0.5, snap):
                # both attempts made things worse: the rate is genuinely too
                # hot, keep it halved; loss stays at the pre-epoch value
                self.lr *= 0.5
            self.model.loss_trace.append((phase, self.current))


def fit(data: TimeSeriesMatrix, cfg: TcnMfConfig, train_cfg: TrainConfig) -> FactorModel:
    """Alternate factor epochs with network training on the basis matrix.

    The regularizer network starts from the window-mean initialization
    and never sees covariates. Factors are drawn uniformly on
    [0, 1/sqrt(rank)] and rescaled so the initial reconstruction matches
    the mean magnitude of the training data.
    """
    values = data.train_values
    n, t = values.shape
    if cfg.rank >= n:
        raise ConfigError(f"rank {cfg.rank} must be < number of series {n}")
    net_config = cfg.network_config()
    net = leveled_init(net_config)
    if cfg.iters_alt > 0 and t <= net_config.lookback + train_cfg.batch_cols:
        raise ConfigError(
            f"training range {t} too short to train the regularizer network "
            f"(look-back {net_config.lookback}, batch_cols {train_cfg.batch_cols})"
        )

    rng = np.random.default_rng(train_cfg.seed)
    bound = 1.0 / math.sqrt(cfg.rank)
    loadings = rng.uniform(0.0, bound, size=(n, cfg.rank))
    basis = rng.uniform(0.0, bound, size=(cfg.rank, t))
    recon_mean = float(np.abs(loadings @ basis).mean())
    target_mean = float(np.abs(values).mean())
    if recon_mean > 0 and target_mean > 0:
        scale = math.sqrt(target_mean / recon_mean)
        loadings *= scale
        basis *= scale

    model = FactorModel(loadings, basis, net, cfg)
    phase = _FactorPhase(model, data, rng)
    phase.run("init", cfg.iters_init)
    for cycle in range(cfg.iters_alt):
        phase.run("factors", cfg.iters_train)
        net_cfg = replace(
            train_cfg,
            max_epochs=cfg.iters_train,
            seed=train_cfg.seed + 1 + cycle,
        )
        tcn.train(net, TimeSeriesMatrix(model.basis, train_len=t), None, net_cfg)
        phase.current = _fit_loss(model, values)
        model.loss_trace.append(("tcn", phase.current))
    return model


def predict_global(model: FactorModel, steps: int) -> np.ndarray:
    """loadings @ (autoregressive basis forecast) over ``steps`` columns."""
    lb = max(model.net.config.dynamic_range, 1)
    if model.basis.shape[1] < lb:
        raise ValueError(
            f"basis has {model.basis.shape[1]} columns, need {lb} for rollout"
        )
    if steps == 0:
        return np.zeros((model.n_series, 0))
    basis_future = rollout_batch(model.net, model.basis[:, None, -lb:], steps)
    return model.loadings @ basis_future


@dataclass
class RollingUpdateInfo:
    converged: bool
    iterations: int
    objective: float


def _argmin_objective(model, y_new, m):
    cfg = model.config
    delta = y_new.shape[1]
    lb = max(model.net.config.dynamic_range, 1)
    tail = model.basis[:, -lb:]
    recon = model.loadings @ m - y_new
    size = y_new.size
    loss = float((recon * recon).mean())
    grad = (2.0 / size) * model.loadings.T @ recon

    seq = np.concatenate([tail, m], axis=1)
    caches: list = []
    out = forward(model.net, seq[:, None, :-1], caches)
    preds = out[:, 0, -delta:]
    diff = m - preds
    scale = 2.0 / (diff.size * delta)
    loss += cfg.lambda_t * float((diff * diff).mean() / delta)
    grad += cfg.lambda_t * scale * diff
    upstream = np.zeros_like(out)
    upstream[:, 0, -delta:] = -cfg.lambda_t * scale * diff
    g_in = tcn._backward_from_caches(model.net, caches, upstream).input[:, 0, :]
    if delta > 1:
        # new columns also feed later predictions; g_in already carries lambda_t
        grad[:, : delta - 1] += g_in[:, lb:]
    return loss, grad


def _hybrid_objective(model, y_new, m, m_hat):
    alpha = model.config.alpha
    recon = model.loadings @ m
    l1, g1 = wape_loss_grad(y_new, recon)
    l2, g2 = wape_loss_grad(m_hat, m)
    loss = (1.0 - alpha) * l1 + alpha * l2
    grad = (1.0 - alpha) * model.loadings.T @ g1 + alpha * g2
    return loss, grad


def rolling_update(
    model: FactorModel,
    y_new: np.ndarray,
    objective: str | None = None,
) -> RollingUpdateInfo:
    """Extend the basis to cover newly revealed columns; loadings and the
    network are never touched.

    The new columns minimize either the global loss (temporal term
    chained from the existing basis tail) or the alpha-blend of
    reconstruction error and distance to the network's own forecast.
    Optimization starts from that forecast and runs Adam until the
    gradient is below rolling_tol or rolling_max_iters is hit; in the
    latter case the best iterate is kept and ``converged`` is False.
    """
    y_new = np.asarray(y_new, dtype=np.float64)
    if y_new.ndim != 2 or y_new.shape[0] != model.n_series:
        raise ValueError(
            f"new block shape {y_new.shape} does not match {model.n_series} series"
        )
    delta = y_new.shape[1]
    if delta < 1:
        raise ValueError("new block must contain at least one column")
    objective = objective or model.config.rolling_objective
    if objective not in ROLLING_OBJECTIVES:
        raise ConfigError(f"unknown rolling objective {objective!r}")
    cfg = model.config
    lb = max(model.net.config.dynamic_range, 1)
    if model.basis.shape[1] < lb:
        raise ValueError("basis too short for the network look-back")

    m_hat = rollout_batch(model.net, model.basis[:, None, -lb:], delta)
    if objective == "global_loss_argmin":
        evaluate = lambda block: _argmin_objective(model, y_new, block)
    else:
        evaluate = lambda block: _hybrid_objective(model, y_new, block, m_hat)

    # optimize a scale-normalized offset from the network forecast so the
    # Adam step size is meaningful regardless of the data's magnitude
    sigma = max(float(np.sqrt((m_hat * m_hat).mean())), 1e-9)
    offset = np.zeros_like(m_hat)
    adam = tcn._AdamState([offset], cfg.rolling_lr)
    best_obj, grad_m = evaluate(m_hat)
    best_m = np.array(m_hat)
    grad = sigma * grad_m
    converged = bool(np.max(np.abs(grad)) <= cfg.rolling_tol)
    iterations = 0
    while not converged and iterations < cfg.rolling_max_iters:
        adam.step([offset], [grad])
        iterations += 1
        m = m_hat + sigma * offset
        obj, grad_m = evaluate(m)
        if obj < best_obj:
            best_obj = obj
            best_m = np.array(m)
        grad = sigma * grad_m
        if np.max(np.abs(grad)) <= cfg.rolling_tol:
            converged = True
    model.basis = np.concatenate([model.basis, best_m], axis=1)
    return RollingUpdateInfo(converged, iterations, float(best_obj))
