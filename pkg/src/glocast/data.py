"""Series matrices, covariate tensors, whitening, and CSV ingestion."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

STD_FLOOR = 1e-6

NORMALIZATION_MODES = ("none", "per_series_whiten")

# Calendar feature channels, in fixed order. Each entry is
# (name, range) where values are zero-based and mapped to [-0.5, 0.5]
# via raw / (range - 1) - 0.5.
TIME_FEATURES = (
    ("minute_of_hour", 60),
    ("hour_of_day", 24),
    ("day_of_week", 7),
    ("day_of_month", 31),
    ("day_of_year", 366),
    ("month_of_year", 12),
    ("week_of_year", 53),
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TimeSeriesMatrix:
    """An n x T matrix of raw series values plus split metadata.

    Row i holds series i. ``train_len`` marks how many leading columns
    belong to the training range; ``horizon`` is the per-window forecast
    length used by rolling evaluation.
    """

    values: np.ndarray
    train_len: int
    horizon: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"series matrix must be 2-d, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DataError(f"series matrix must be non-empty, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise DataError(f"non-finite value at row {bad[0] + 1}, column {bad[1] + 1}")
        if not 1 <= self.train_len <= vals.shape[1]:
            raise DataError(
                f"train_len {self.train_len} outside [1, {vals.shape[1]}]"
            )
        if self.horizon < 0:
            raise DataError(f"horizon must be >= 0, got {self.horizon}")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def total_len(self) -> int:
        return self.values.shape[1]

    @property
    def train_values(self) -> np.ndarray:
        return self.values[:, : self.train_len]

    def submatrix(self, rows, cols) -> np.ndarray:
        """Return the |rows| x |cols| submatrix for index sets ``rows``, ``cols``."""
        return self.values[np.ix_(np.asarray(rows), np.asarray(cols))]

    def with_split(self, train_len: int, horizon: int = 0) -> "TimeSeriesMatrix":
        return replace(self, train_len=train_len, horizon=horizon)


@dataclass(frozen=True)
class CovariateTensor:
    """Covariates shaped [n x r x T_total].

    A leading dimension of 1 means the channels are shared by every
    series (time features); ``for_rows`` broadcasts on demand.
    Covariates must cover the entire forecast range, so T_total normally
    exceeds the observed series length.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise DataError(f"covariate tensor must be 3-d, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise DataError("covariate tensor contains non-finite values")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def total_len(self) -> int:
        return self.values.shape[2]

    def for_rows(self, rows) -> np.ndarray:
        """Channels for the given row indices, broadcasting shared channels."""
        if self.values.shape[0] == 1:
            return np.broadcast_to(
                self.values, (len(rows), self.n_channels, self.total_len)
            )[np.arange(len(rows))]
        return self.values[np.asarray(rows)]

    def expand(self, n_series: int) -> np.ndarray:
        """Materialize to [n_series x r x T_total]."""
        if self.values.shape[0] == 1:
            return np.ascontiguousarray(
                np.broadcast_to(self.values, (n_series, self.n_channels, self.total_len))
            )
        if self.values.shape[0] != n_series:
            raise DataError(
                f"covariate tensor has {self.values.shape[0]} rows, expected {n_series}"
            )
        return np.array(self.values)


@dataclass(frozen=True)
class NormalizationState:
    """Per-series whitening statistics computed on the training range."""

    mode: str
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.mode not in NORMALIZATION_MODES:
            raise DataError(f"unknown normalization mode {self.mode!r}")
        object.__setattr__(self, "means", _frozen(np.atleast_1d(self.means)))
        object.__setattr__(self, "stds", _frozen(np.atleast_1d(self.stds)))
        if (self.stds <= 0).any():
            raise DataError("normalization stds must be strictly positive")


def load_csv(
    path,
    delimiter: str = ",",
    header: bool = False,
    id_column: bool = False,
) -> tuple[TimeSeriesMatrix, list[str] | None]:
    """Load a one-series-per-row CSV into a TimeSeriesMatrix.

    Returns the matrix (train_len defaults to the full width) and the
    list of row identifiers when ``id_column`` is set, else None.
    Raises DataError on I/O failure, ragged rows (named by 1-based row
    index), or non-numeric cells (named by 1-based row and column).
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh, delimiter=delimiter)
            raw_rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if header and raw_rows:
        raw_rows = raw_rows[1:]
    if not raw_rows:
        raise DataError(f"no rows in {path}")

    ids: list[str] | None = [] if id_column else None
    rows = []
    width = None
    for r, cells in enumerate(raw_rows, start=1):
        if id_column:
            ids.append(cells[0])
            cells = cells[1:]
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise DataError(
                f"ragged row {r}: expected {width} columns, found {len(cells)}"
            )
        try:
            rows.append(np.array(cells, dtype=np.float64))
        except ValueError:
            for c, cell in enumerate(cells, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric cell at row {r}, column {c}: {cell!r}"
                    ) from None
            raise
    if width == 0:
        raise DataError(f"no data columns in {path}")

    matrix = TimeSeriesMatrix(np.vstack(rows), train_len=width)
    return matrix, ids


def save_csv(values: np.ndarray, path, ids: list[str] | None = None) -> None:
    """Write a matrix as CSV with 17 significant digits (lossless round trip)."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        for i, row in enumerate(values):
            cells = [f"{v:.17g}" for v in row]
            if ids is not None:
                cells.insert(0, ids[i])
            fh.write(",".join(cells) + "\n")


def load_static_covariates(path, delimiter: str = ",") -> np.ndarray:
    """Load per-series static features (one row per series) as [n x r]."""
    matrix, _ = load_csv(path, delimiter=delimiter)
    return np.array(matrix.values)


def parse_duration(text: str) -> dt.timedelta:
    """Parse step strings like '15min', '1h', '1d', '1w'."""
    units = {
        "s": dt.timedelta(seconds=1),
        "min": dt.timedelta(minutes=1),
        "h": dt.timedelta(hours=1),
        "d": dt.timedelta(days=1),
        "w": dt.timedelta(weeks=1),
    }
    text = text.strip()
    for suffix in sorted(units, key=len, reverse=True):
        if text.endswith(suffix):
            head = text[: -len(suffix)].strip() or "1"
            try:
                count = float(head)
            except ValueError:
                break
            if count <= 0:
                raise DataError(f"duration must be positive: {text!r}")
            return count * units[suffix]
    raise DataError(f"cannot parse duration {text!r} (use e.g. 15min, 1h, 1d)")


def _time_feature_values(ts: dt.datetime) -> list[int]:
    return [
        ts.minute,
        ts.hour,
        (ts.weekday() + 1) % 7,  # Sunday = 0 .. Saturday = 6
        ts.day - 1,
        ts.timetuple().tm_yday - 1,
        ts.month - 1,
        ts.isocalendar()[1] - 1,
    ]


def make_time_covariates(
    t_total: int, start: dt.datetime, step: dt.timedelta
) -> CovariateTensor:
    """Generate the 7 calendar channels for t_total steps from ``start``.

    Channel order: minute of the hour, hour of the day, day of the week,
    day of the month, day of the year, month of the year, week of the
    year. Each raw value is mapped by raw / (range - 1) - 0.5, so every
    channel lies in [-0.5, 0.5]. Weeks follow the ISO calendar; dates use
    the proleptic Gregorian calendar.
    """
    if t_total < 1:
        raise DataError(f"t_total must be >= 1, got {t_total}")
    if step <= dt.timedelta(0):
        raise DataError("step must be a positive duration")
    ranges = np.array([r for _, r in TIME_FEATURES], dtype=np.float64)
    raw = np.empty((len(TIME_FEATURES), t_total), dtype=np.float64)
    ts = start
    for j in range(t_total):
        raw[:, j] = _time_feature_values(ts)
        ts = ts + step
    scaled = raw / (ranges[:, None] - 1.0) - 0.5
    return CovariateTensor(scaled[None, :, :])


def combine_covariates(
    time_cov: CovariateTensor | None,
    static: np.ndarray | None,
    n_series: int,
    t_total: int,
) -> CovariateTensor | None:
    """Stack time features and replicated static features into one tensor."""
    parts = []
    if time_cov is not None:
        if time_cov.total_len < t_total:
            raise DataError(
                f"time covariates cover {time_cov.total_len} steps, need {t_total}"
            )
        parts.append(time_cov.expand(n_series)[:, :, :t_total])
    if static is not None:
        static = np.asarray(static, dtype=np.float64)
        if static.shape[0] != n_series:
            raise DataError(
                f"static covariates have {static.shape[0]} rows, expected {n_series}"
            )
        parts.append(np.repeat(static[:, :, None], t_total, axis=2))
    if not parts:
        return None
    return CovariateTensor(np.concatenate(parts, axis=1))


def normalize(
    matrix: TimeSeriesMatrix, mode: str = "per_series_whiten"
) -> tuple[TimeSeriesMatrix, NormalizationState]:
    """Whiten each series using statistics from its training columns only.

    Constant series hit the std floor (STD_FLOOR) instead of failing.
    mode='none' returns the matrix unchanged with identity statistics.
    """
    n = matrix.n_series
    if mode == "none":
        state = NormalizationState("none", np.zeros(n), np.ones(n))
        return matrix, state
    if mode != "per_series_whiten":
        raise DataError(f"unknown normalization mode {mode!r}")
    if matrix.train_len < 2:
        raise DataError("per-series whitening needs train_len >= 2")
    train = matrix.train_values
    means = train.mean(axis=1)
    stds = np.maximum(train.std(axis=1), STD_FLOOR)
    whitened = (matrix.values - means[:, None]) / stds[:, None]
    state = NormalizationState("per_series_whiten", means, stds)
    return replace(matrix, values=whitened), state


def denormalize(values: np.ndarray, state: NormalizationState) -> np.ndarray:
    """Map whitened values back to the original scale, row-wise."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != state.means.shape[0]:
        raise DataError(
            f"cannot denormalize shape {values.shape} with {state.means.shape[0]} series"
        )
    if state.mode == "none":
        return np.array(values)
    return values * state.stds[:, None] + state.means[:, None]
