"""Rolling-origin evaluation: forecast a window, reveal the truth,
incorporate it, repeat; score on the concatenated predictions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .data import TimeSeriesMatrix
from .errors import ConfigError, GlocastError
from .metrics import metric_report


@dataclass(frozen=True)
class RollingProtocol:
    """Evaluation schedule: initial training length t0, window size tau,
    and number of windows. Window i covers columns (t0 + (i-1)*tau,
    t0 + i*tau]."""

    t0: int
    tau: int
    n_windows: int

    def __post_init__(self):
        if self.t0 < 1 or self.tau < 1 or self.n_windows < 1:
            raise ConfigError(
                f"protocol fields must be positive, got t0={self.t0}, "
                f"tau={self.tau}, n_windows={self.n_windows}"
            )

    @property
    def eval_len(self) -> int:
        return self.tau * self.n_windows

    def boundaries(self) -> list[int]:
        return [self.t0 + i * self.tau for i in range(self.n_windows + 1)]

    def validate_against(self, total_len: int) -> None:
        if self.t0 + self.eval_len > total_len:
            raise ConfigError(
                f"protocol needs {self.t0 + self.eval_len} columns, data has {total_len}"
            )


class Forecaster(Protocol):
    """Anything that can forecast a window and absorb revealed truth."""

    def predict(self, steps: int) -> np.ndarray: ...

    def incorporate(self, block: np.ndarray) -> None: ...


@dataclass
class RollingResult:
    predictions: np.ndarray
    per_window: list[dict[str, float]]
    overall: dict[str, float]
    components: dict[str, np.ndarray] = field(default_factory=dict)


def run_rolling(
    forecaster: Forecaster, data: TimeSeriesMatrix, protocol: RollingProtocol
) -> RollingResult:
    """Sequentially forecast each window and feed back the revealed truth.

    The overall metrics are computed on the concatenation of all window
    predictions against the full evaluation range, not by averaging the
    per-window scores.
    """
    protocol.validate_against(data.total_len)
    values = data.values
    preds = []
    per_window = []
    components: dict[str, list[np.ndarray]] = {}
    bounds = protocol.boundaries()
    for i in range(protocol.n_windows):
        lo, hi = bounds[i], bounds[i + 1]
        try:
            window_pred = np.asarray(forecaster.predict(protocol.tau), dtype=np.float64)
        except GlocastError:
            raise
        except Exception as exc:
            raise GlocastError(f"forecaster failed at window {i + 1}: {exc}") from exc
        if window_pred.shape != (data.n_series, protocol.tau):
            raise ValueError(
                f"window {i + 1} prediction shape {window_pred.shape} != "
                f"{(data.n_series, protocol.tau)}"
            )
        truth = values[:, lo:hi]
        preds.append(window_pred)
        per_window.append(metric_report(truth, window_pred))
        get_components = getattr(forecaster, "last_components", None)
        if get_components is not None:
            for name, comp in get_components().items():
                components.setdefault(name, []).append(comp)
        try:
            forecaster.incorporate(np.array(truth))
        except Exception as exc:
            raise GlocastError(f"incorporate failed at window {i + 1}: {exc}") from exc

    stacked = np.concatenate(preds, axis=1)
    overall = metric_report(values[:, bounds[0] : bounds[-1]], stacked)
    return RollingResult(
        predictions=stacked,
        per_window=per_window,
        overall=overall,
        components={k: np.concatenate(v, axis=1) for k, v in components.items()},
    )


class LastValueForecaster:
    """Repeats the most recently observed value across the window."""

    def __init__(self, history: np.ndarray):
        self.last = np.array(history[:, -1])

    def predict(self, steps: int) -> np.ndarray:
        return np.repeat(self.last[:, None], steps, axis=1)

    def incorporate(self, block: np.ndarray) -> None:
        self.last = np.array(block[:, -1])


class TrainingMeanForecaster:
    """Repeats the per-series mean of the initial training range."""

    def __init__(self, history: np.ndarray):
        self.mean = history.mean(axis=1)

    def predict(self, steps: int) -> np.ndarray:
        return np.repeat(self.mean[:, None], steps, axis=1)

    def incorporate(self, block: np.ndarray) -> None:
        pass


def naive_baselines(
    data: TimeSeriesMatrix, protocol: RollingProtocol
) -> dict[str, RollingResult]:
    """Rolling results for the last-value and training-mean predictors."""
    history = data.values[:, : protocol.t0]
    return {
        "last_value": run_rolling(LastValueForecaster(history), data, protocol),
        "training_mean": run_rolling(TrainingMeanForecaster(history), data, protocol),
    }


def _window_rows(tag: str, result: RollingResult) -> dict:
    return {
        "model": tag,
        "overall": result.overall,
        "windows": result.per_window,
    }


def write_report(
    path,
    protocol: RollingProtocol,
    model_result: RollingResult,
    baselines: dict[str, RollingResult] | None = None,
    model_name: str = "model",
) -> None:
    """JSON report with per-window and overall metrics for the model and
    the naive baselines."""
    rows = [_window_rows(model_name, model_result)]
    for name, res in (baselines or {}).items():
        rows.append(_window_rows(name, res))
    doc = {
        "protocol": {"t0": protocol.t0, "tau": protocol.tau, "n_windows": protocol.n_windows},
        "results": rows,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_plot_data(
    directory,
    data: TimeSeriesMatrix,
    protocol: RollingProtocol,
    result: RollingResult,
    ids: list[str] | None = None,
) -> list[Path]:
    """Per-series CSVs with columns time, actual, predicted, and the
    global/local components when the forecaster reported them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lo = protocol.t0
    hi = protocol.t0 + protocol.eval_len
    times = np.arange(lo, hi)
    comp_names = [k for k in ("global", "local") if k in result.components]
    paths = []
    for i in range(data.n_series):
        name = ids[i] if ids is not None else f"series_{i:05d}"
        path = directory / f"{name}.csv"
        header = ["time", "actual", "predicted"] + [f"component_{c}" for c in comp_names]
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for j, t in enumerate(times):
                row = [
                    str(int(t)),
                    f"{data.values[i, t]:.17g}",
                    f"{result.predictions[i, j]:.17g}",
                ]
                for c in comp_names:
                    row.append(f"{result.components[c][i, j]:.17g}")
                fh.write(",".join(row) + "\n")
        paths.append(path)
    return paths
