"""Command-line front end: training, rolling evaluation, prediction,
and basis export.

Configuration is a flat ``key = value`` text file; command-line flags
(--seed, --normalize, --t0, ..., and the generic repeatable
--set key=value) override file values. Every run writes the fully
resolved configuration next to its outputs, in a form that can be fed
back in as a config file.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import CheckpointError, ConfigError, DataError, GlocastError, TrainingDivergedError


@dataclass
class RunConfig:
    """The flat key set accepted in config files and --set overrides."""

    # data handling
    delimiter: str = ","
    header: bool = False
    id_col: bool = False
    normalize: str = "none"  # none | per-series
    time_covariates: bool = False
    start: str = "2012-01-01T00:00"
    step: str = "1h"
    static_covariates: str = ""
    # network architecture (local nets and the basis regularizer)
    kernel_size: int = 7
    channels: str = "32,32,32,32,32,1"
    use_residual: bool = False
    init: str = "leveled"  # leveled | random
    # mini-batch training
    learning_rate: float = 0.01
    batch_rows: int = 32
    batch_cols: int = 64
    max_epochs: int = 300
    patience: int = 7
    loss: str = "wape"
    optimizer: str = "sgd"
    val_fraction: float = 0.1
    seed: int = 0
    # global factorization
    rank: int = 64
    lambda_t: float = 0.2
    alpha: float = 0.2
    iters_init: int = 10
    iters_train: int = 10
    iters_alt: int = 5
    factor_lr: float = 0.1
    rolling_objective: str = "global_loss_argmin"
    rolling_lr: float = 0.05
    rolling_max_iters: int = 300
    reg_full_context: bool = True
    # deep leveled network
    dln_window: int = 24
    # hybrid model
    combiner: str = "covariate"
    attention_channels: str = "16,16,2"
    # rolling protocol
    t0: int = 0
    tau: int = 24
    windows: int = 7


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key!r} expects a boolean, got {raw!r}")
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key!r} expects an integer, got {raw!r}") from None
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key!r} expects a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw)
    return values


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update(overrides)
    cfg = RunConfig(**values)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if cfg.normalize not in ("none", "per-series"):
        raise ConfigError(f"normalize must be none or per-series, got {cfg.normalize!r}")
    if cfg.init not in ("leveled", "random"):
        raise ConfigError(f"init must be leveled or random, got {cfg.init!r}")
    if cfg.combiner not in ("covariate", "attention"):
        raise ConfigError(f"combiner must be covariate or attention, got {cfg.combiner!r}")
    _parse_channel_list(cfg.channels)
    _parse_channel_list(cfg.attention_channels)


def _parse_channel_list(text: str) -> tuple[int, ...]:
    try:
        channels = tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"channel list must be comma-separated integers, got {text!r}") from None
    if not channels:
        raise ConfigError(f"channel list is empty: {text!r}")
    return channels


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse hook
        raise ConfigError(message)


def _add_common(parser, training: bool):
    parser.add_argument("--data", required=True, help="input CSV, one series per row")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("--normalize", choices=["none", "per-series"])
    parser.add_argument("--header", action="store_true", default=None,
                        help="skip the first CSV row")
    parser.add_argument("--id-col", action="store_true", default=None,
                        help="treat the first CSV column as an identifier")
    parser.add_argument("--t0", type=int, help="initial training length")
    parser.add_argument("--tau", type=int, help="rolling window size")
    parser.add_argument("--windows", type=int, help="number of rolling windows")
    if training:
        parser.add_argument("--seed", type=int, help="RNG seed (required)")


def build_parser() -> _Parser:
    parser = _Parser(prog="glocast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train-local", "train-global", "train-deepglo", "train-dln"):
        p = sub.add_parser(name)
        _add_common(p, training=True)

    p = sub.add_parser("evaluate-rolling")
    _add_common(p, training=False)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("predict")
    _add_common(p, training=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, required=True)

    p = sub.add_parser("emit-basis")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _collect_overrides(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        overrides[key.strip()] = _parse_value(key.strip(), raw)
    if getattr(args, "normalize", None) is not None:
        overrides["normalize"] = args.normalize
    for flag in ("header", "id_col", "t0", "tau", "windows", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    return overrides


# --- pipeline helpers -------------------------------------------------


def _norm_mode(cfg: RunConfig) -> str:
    return "per_series_whiten" if cfg.normalize == "per-series" else "none"


def _load_dataset(cfg: RunConfig, data_path: str):
    from .data import load_csv

    matrix, ids = load_csv(
        data_path, delimiter=cfg.delimiter, header=cfg.header, id_column=cfg.id_col
    )
    train_len = cfg.t0 if cfg.t0 > 0 else matrix.total_len
    if train_len > matrix.total_len:
        raise ConfigError(
            f"t0 {train_len} exceeds the data length {matrix.total_len}"
        )
    return matrix.with_split(train_len, cfg.tau), ids


def _build_covariates(cfg: RunConfig, n_series: int, t_total: int):
    from .data import combine_covariates, load_static_covariates, make_time_covariates, parse_duration

    time_cov = None
    if cfg.time_covariates:
        try:
            start = dt.datetime.fromisoformat(cfg.start)
        except ValueError:
            raise ConfigError(f"start is not an ISO timestamp: {cfg.start!r}") from None
        time_cov = make_time_covariates(t_total, start, parse_duration(cfg.step))
    static = load_static_covariates(cfg.static_covariates) if cfg.static_covariates else None
    return combine_covariates(time_cov, static, n_series, t_total)


def _train_config(cfg: RunConfig):
    from .tcn import TrainConfig

    return TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_rows=cfg.batch_rows,
        batch_cols=cfg.batch_cols,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        loss=cfg.loss,
        seed=cfg.seed,
        val_fraction=cfg.val_fraction,
        optimizer=cfg.optimizer,
    )


def _factor_config(cfg: RunConfig):
    from .factorization import TcnMfConfig

    return TcnMfConfig(
        rank=cfg.rank,
        lambda_t=cfg.lambda_t,
        alpha=cfg.alpha,
        iters_init=cfg.iters_init,
        iters_train=cfg.iters_train,
        iters_alt=cfg.iters_alt,
        factor_lr=cfg.factor_lr,
        rolling_objective=cfg.rolling_objective,
        rolling_lr=cfg.rolling_lr,
        rolling_max_iters=cfg.rolling_max_iters,
        reg_full_context=cfg.reg_full_context,
        net_kernel_size=cfg.kernel_size,
        net_channels=_parse_channel_list(cfg.channels),
    )


def _write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in trace:
            fh.write(f"{row.epoch},{row.train_loss:.17g},{row.val_loss:.17g}\n")


def _write_factor_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (_phase, loss) in enumerate(trace, start=1):
            fh.write(f"{i},{loss:.17g},nan\n")


def _emit_config(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / "config_resolved.cfg").write_text(config_to_text(cfg))


def _norm_arrays(state):
    return {"norm_means": state.means, "norm_stds": state.stds}


def _state_from_arrays(meta, arrays):
    from .data import NormalizationState

    return NormalizationState(meta["normalize_mode"], arrays["norm_means"], arrays["norm_stds"])


def _prepare_training(cfg: RunConfig, data_path: str):
    from .data import normalize

    matrix, ids = _load_dataset(cfg, data_path)
    covariates = _build_covariates(
        cfg, matrix.n_series, matrix.total_len + cfg.tau * cfg.windows
    )
    normalized, state = normalize(matrix, _norm_mode(cfg))
    return matrix, normalized, covariates, state, ids


# --- subcommands ------------------------------------------------------


def _cmd_train_local(args) -> int:
    from . import tcn
    from .checkpoint import network_meta, pack_network, save_bundle
    from .tcn import TcnConfig, TcnNetwork, leveled_init

    cfg = resolve_config(args.config, _collect_overrides(args))
    _require_seed(args)
    out_dir = _ensure_out(args.out)
    _matrix, normalized, covariates, state, _ids = _prepare_training(cfg, args.data)
    r = covariates.n_channels if covariates is not None else 0
    net_cfg = TcnConfig(
        cfg.kernel_size,
        _parse_channel_list(cfg.channels),
        input_channels=1 + r,
        use_residual=cfg.use_residual,
    )
    if cfg.init == "leveled":
        net = leveled_init(net_cfg)
    else:
        import numpy as np

        net = TcnNetwork.random_init(net_cfg, np.random.default_rng(cfg.seed))
    result = tcn.train(net, normalized, covariates, _train_config(cfg))
    meta = {
        "net": network_meta(net),
        "seed": cfg.seed,
        "normalize_mode": state.mode,
        "config": dataclasses.asdict(cfg),
    }
    save_bundle(out_dir / "checkpoint.glocast", "tcn-local",
                meta, pack_network(net) | _norm_arrays(state))
    _write_trace(out_dir / "loss_trace.csv", result.trace)
    _emit_config(cfg, out_dir)
    return 0


def _cmd_train_dln(args) -> int:
    import numpy as np

    from .checkpoint import network_meta, pack_network, save_bundle
    from .dln import DlnNetwork, dln_train, residual_init
    from .tcn import TcnConfig, leveled_init

    cfg = resolve_config(args.config, _collect_overrides(args))
    _require_seed(args)
    out_dir = _ensure_out(args.out)
    _matrix, normalized, _cov, state, _ids = _prepare_training(cfg, args.data)
    net_cfg = TcnConfig(
        cfg.kernel_size, _parse_channel_list(cfg.channels),
        input_channels=1, use_residual=cfg.use_residual,
    )
    dln = DlnNetwork(
        mean_net=leveled_init(net_cfg),
        residual_net=residual_init(net_cfg, np.random.default_rng(cfg.seed)),
        window=cfg.dln_window,
    )
    result = dln_train(dln, normalized, _train_config(cfg))
    meta = {
        "mean_net": network_meta(dln.mean_net),
        "residual_net": network_meta(dln.residual_net),
        "window": dln.window,
        "seed": cfg.seed,
        "normalize_mode": state.mode,
        "config": dataclasses.asdict(cfg),
    }
    arrays = pack_network(dln.mean_net, "mean_") | pack_network(dln.residual_net, "resid_")
    save_bundle(out_dir / "checkpoint.glocast", "dln", meta, arrays | _norm_arrays(state))
    _write_trace(out_dir / "loss_trace.csv", result.trace)
    _emit_config(cfg, out_dir)
    return 0


def _factor_meta_arrays(model, state, cfg):
    from .checkpoint import network_meta, pack_network

    meta = {
        "net": network_meta(model.net),
        "factor": dataclasses.asdict(model.config)
        | {"net_channels": list(model.config.net_channels)},
        "seed": cfg.seed,
        "normalize_mode": state.mode,
        "config": dataclasses.asdict(cfg),
    }
    arrays = {"loadings": model.loadings, "basis": model.basis}
    arrays |= pack_network(model.net, "tx_")
    return meta, arrays


def _cmd_train_global(args) -> int:
    from .factorization import fit

    cfg = resolve_config(args.config, _collect_overrides(args))
    _require_seed(args)
    out_dir = _ensure_out(args.out)
    _matrix, normalized, _cov, state, _ids = _prepare_training(cfg, args.data)
    model = fit(normalized, _factor_config(cfg), _train_config(cfg))
    meta, arrays = _factor_meta_arrays(model, state, cfg)
    from .checkpoint import save_bundle

    save_bundle(out_dir / "checkpoint.glocast", "tcn-mf", meta, arrays | _norm_arrays(state))
    _write_factor_trace(out_dir / "loss_trace.csv", model.loss_trace)
    _emit_config(cfg, out_dir)
    return 0


def _cmd_train_deepglo(args) -> int:
    from .checkpoint import network_meta, pack_network, save_bundle
    from .hybrid import fit_deepglo

    cfg = resolve_config(args.config, _collect_overrides(args))
    _require_seed(args)
    out_dir = _ensure_out(args.out)
    _matrix, normalized, covariates, state, _ids = _prepare_training(cfg, args.data)
    model = fit_deepglo(
        normalized,
        covariates,
        _factor_config(cfg),
        _train_config(cfg),
        kernel_size=cfg.kernel_size,
        channels=_parse_channel_list(cfg.channels),
        combiner=cfg.combiner,
        attention_channels=_parse_channel_list(cfg.attention_channels),
    )
    meta, arrays = _factor_meta_arrays(model.global_model, state, cfg)
    meta["hybrid_net"] = network_meta(model.hybrid_net)
    meta["combiner"] = model.combiner
    arrays |= pack_network(model.hybrid_net, "ty_")
    if model.attention_net is not None:
        meta["attention_net"] = network_meta(model.attention_net)
        arrays |= pack_network(model.attention_net, "ta_")
    save_bundle(out_dir / "checkpoint.glocast", "deepglo", meta, arrays | _norm_arrays(state))
    _write_trace(out_dir / "loss_trace.csv", model.train_result.trace)
    _emit_config(cfg, out_dir)
    return 0


def _rebuild_forecaster(kind: str, meta: dict, arrays: dict, cfg: RunConfig, data, covariates):
    import numpy as np

    from .checkpoint import unpack_network
    from .factorization import FactorModel, TcnMfConfig
    from .forecasters import (
        DeepGloForecaster,
        DlnForecaster,
        GlobalFactorForecaster,
        LocalTcnForecaster,
    )
    from .hybrid import DeepGloModel

    state = _state_from_arrays(meta, arrays)
    if data.n_series != state.means.shape[0]:
        raise DataError(
            f"checkpoint was trained on {state.means.shape[0]} series, "
            f"data has {data.n_series}"
        )
    history = np.array(data.values[:, : data.train_len])

    if kind == "tcn-local":
        net = unpack_network(meta["net"], arrays)
        return LocalTcnForecaster(net, history, covariates, state)
    if kind == "dln":
        from .dln import DlnNetwork

        dln = DlnNetwork(
            unpack_network(meta["mean_net"], arrays, "mean_"),
            unpack_network(meta["residual_net"], arrays, "resid_"),
            int(meta["window"]),
        )
        return DlnForecaster(dln, history, state)

    factor_meta = dict(meta["factor"])
    factor_meta["net_channels"] = tuple(factor_meta["net_channels"])
    factor_cfg = TcnMfConfig(**factor_meta)
    model = FactorModel(
        loadings=arrays["loadings"],
        basis=arrays["basis"],
        net=unpack_network(meta["net"], arrays, "tx_"),
        config=factor_cfg,
    )
    if model.basis.shape[1] != data.train_len:
        raise ConfigError(
            f"checkpoint basis covers {model.basis.shape[1]} columns but t0 is {data.train_len}"
        )
    if kind == "tcn-mf":
        return GlobalFactorForecaster(model, state)
    if kind == "deepglo":
        from .forecasters import _whiten

        hybrid_net = unpack_network(meta["hybrid_net"], arrays, "ty_")
        attention_net = None
        if "attention_net" in meta:
            attention_net = unpack_network(meta["attention_net"], arrays, "ta_")
        deep = DeepGloModel(
            global_model=model,
            hybrid_net=hybrid_net,
            combiner=meta["combiner"],
            attention_net=attention_net,
            history=_whiten(history, state),
            covariates=covariates,
        )
        return DeepGloForecaster(deep, state)
    raise CheckpointError(f"cannot evaluate checkpoint kind {kind!r}")


def _cmd_evaluate(args) -> int:
    from .rolling import RollingProtocol, naive_baselines, run_rolling, write_plot_data, write_report

    cfg, kind, meta, arrays = _load_with_checkpoint(args)
    if cfg.t0 <= 0:
        raise ConfigError("evaluate-rolling requires --t0 (initial training length)")
    out_dir = _ensure_out(args.out)
    data, ids = _load_dataset(cfg, args.data)
    protocol = RollingProtocol(cfg.t0, cfg.tau, cfg.windows)
    protocol.validate_against(data.total_len)
    covariates = _build_covariates(cfg, data.n_series, cfg.t0 + protocol.eval_len)
    forecaster = _rebuild_forecaster(kind, meta, arrays, cfg, data, covariates)
    result = run_rolling(forecaster, data, protocol)
    baselines = naive_baselines(data, protocol)
    write_report(out_dir / "metrics.json", protocol, result, baselines, model_name=kind)
    write_plot_data(out_dir / "plot_data", data, protocol, result, ids)
    _emit_config(cfg, out_dir)
    return 0


def _cmd_predict(args) -> int:
    from .data import save_csv

    cfg, kind, meta, arrays = _load_with_checkpoint(args)
    out_dir = _ensure_out(args.out)
    data, ids = _load_dataset(cfg, args.data)
    covariates = _build_covariates(cfg, data.n_series, data.train_len + args.steps)
    forecaster = _rebuild_forecaster(kind, meta, arrays, cfg, data, covariates)
    preds = forecaster.predict(args.steps)
    save_csv(preds, out_dir / "forecast.csv", ids)
    _emit_config(cfg, out_dir)
    return 0


def _cmd_emit_basis(args) -> int:
    from .checkpoint import load_bundle
    from .data import save_csv

    kind, _meta, arrays = load_bundle(args.checkpoint)
    if kind not in ("tcn-mf", "deepglo"):
        raise ConfigError(
            f"emit-basis needs a global model checkpoint, found kind {kind!r}"
        )
    save_csv(arrays["basis"], args.out)
    return 0


def _load_with_checkpoint(args):
    from .checkpoint import load_bundle

    kind, meta, arrays = load_bundle(args.checkpoint)
    stored = {k: v for k, v in meta.get("config", {}).items()}
    cfg = RunConfig(**stored) if stored else RunConfig()
    overrides = _collect_overrides(args)
    if args.config:
        file_values = parse_config_text(Path(args.config).read_text())
        overrides = file_values | overrides
    for key, value in overrides.items():
        setattr(cfg, key, value)
    _validate_config(cfg)
    return cfg, kind, meta, arrays


def _require_seed(args) -> None:
    if getattr(args, "seed", None) is None:
        raise ConfigError("--seed is required for training commands")


def _ensure_out(path: str) -> Path:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


_COMMANDS = {
    "train-local": _cmd_train_local,
    "train-global": _cmd_train_global,
    "train-deepglo": _cmd_train_deepglo,
    "train-dln": _cmd_train_dln,
    "evaluate-rolling": _cmd_evaluate,
    "predict": _cmd_predict,
    "emit-basis": _cmd_emit_basis,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except GlocastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
