import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glocast.data import (
    CovariateTensor,
    TimeSeriesMatrix,
    combine_covariates,
    denormalize,
    load_csv,
    make_time_covariates,
    normalize,
    parse_duration,
    save_csv,
)
from glocast.errors import DataError

HOUR = dt.timedelta(hours=1)


class TestLoadCsv:
    def test_basic_parse(self, tmp_path):
        path = tmp_path / "y.csv"
        path.write_text("1,2,3\n4,5,6\n")
        matrix, ids = load_csv(path)
        assert ids is None
        np.testing.assert_array_equal(matrix.values, [[1, 2, 3], [4, 5, 6]])
        assert matrix.n_series == 2 and matrix.total_len == 3

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="no rows"):
            load_csv(path)

    def test_ragged_rows_name_the_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("1,2,3\n4,5\n")
        with pytest.raises(DataError, match="row 2"):
            load_csv(path)

    def test_non_numeric_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,2,3\n4,oops,6\n")
        with pytest.raises(DataError, match="row 2, column 2"):
            load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="nope.csv"):
            load_csv(tmp_path / "nope.csv")

    def test_header_and_id_column(self, tmp_path):
        path = tmp_path / "y.csv"
        path.write_text("id,h0,h1\na,1,2\nb,3,4\n")
        matrix, ids = load_csv(path, header=True, id_column=True)
        assert ids == ["a", "b"]
        np.testing.assert_array_equal(matrix.values, [[1, 2], [3, 4]])

    def test_rejects_missing_values(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("1,nan,3\n")
        with pytest.raises(DataError, match="row 1, column 2"):
            load_csv(path)

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(
            st.lists(
                st.floats(
                    allow_nan=False,
                    allow_infinity=False,
                    min_value=-1e12,
                    max_value=1e12,
                ),
                min_size=3,
                max_size=3,
            ),
            min_size=1,
            max_size=4,
        )
    )
    def test_round_trip_is_bit_exact(self, rows):
        import tempfile, os

        values = np.array(rows)
        fd, path = tempfile.mkstemp(suffix=".csv")
        os.close(fd)
        try:
            save_csv(values, path)
            loaded, _ = load_csv(path)
            np.testing.assert_array_equal(loaded.values, values)
        finally:
            os.unlink(path)


class TestTimeSeriesMatrix:
    def test_invariants_enforced(self):
        with pytest.raises(DataError):
            TimeSeriesMatrix(np.array([[1.0, np.nan]]), train_len=2)
        with pytest.raises(DataError):
            TimeSeriesMatrix(np.array([[1.0, 2.0]]), train_len=3)
        with pytest.raises(DataError):
            TimeSeriesMatrix(np.array([[1.0, 2.0]]), train_len=0)

    def test_submatrix_shape(self):
        m = TimeSeriesMatrix(np.arange(12, dtype=float).reshape(3, 4), train_len=4)
        sub = m.submatrix([0, 2], [1, 2, 3])
        assert sub.shape == (2, 3)
        np.testing.assert_array_equal(sub, [[1, 2, 3], [9, 10, 11]])

    def test_values_immutable(self):
        m = TimeSeriesMatrix(np.ones((2, 3)), train_len=3)
        with pytest.raises(ValueError):
            m.values[0, 0] = 5.0


class TestTimeCovariates:
    def test_hour_of_day_endpoints(self):
        cov = make_time_covariates(24, dt.datetime(2020, 1, 1, 0, 0), HOUR)
        hour = cov.values[0, 1]
        assert hour[0] == -0.5  # midnight
        assert hour[23] == 0.5  # 23:00

    def test_day_of_week_wednesday_is_zero(self):
        # 2020-01-01 was a Wednesday: index 3 on the Sunday-based 0..6
        # scale, so 3/6 - 0.5 = 0.0
        cov = make_time_covariates(1, dt.datetime(2020, 1, 1, 12, 0), HOUR)
        assert cov.values[0, 2, 0] == pytest.approx(0.0, abs=1e-15)

    def test_channel_order_and_count(self):
        cov = make_time_covariates(5, dt.datetime(2021, 6, 15, 10, 30), HOUR)
        assert cov.values.shape == (1, 7, 5)
        # minute 30 -> 30/59 - 0.5
        assert cov.values[0, 0, 0] == pytest.approx(30 / 59 - 0.5)
        # month June -> 5/11 - 0.5
        assert cov.values[0, 5, 0] == pytest.approx(5 / 11 - 0.5)

    def test_hourly_period_repeats_every_24(self):
        cov = make_time_covariates(72, dt.datetime(2020, 3, 5), HOUR)
        hour = cov.values[0, 1]
        np.testing.assert_array_equal(hour[:24], hour[24:48])
        np.testing.assert_array_equal(hour[:24], hour[48:72])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_channels_bounded(self, offset):
        start = dt.datetime(2019, 1, 1) + offset * HOUR
        cov = make_time_covariates(8, start, HOUR)
        assert (cov.values >= -0.5).all() and (cov.values <= 0.5).all()

    def test_rejects_bad_args(self):
        with pytest.raises(DataError):
            make_time_covariates(0, dt.datetime(2020, 1, 1), HOUR)
        with pytest.raises(DataError):
            make_time_covariates(3, dt.datetime(2020, 1, 1), dt.timedelta(0))

    def test_parse_duration(self):
        assert parse_duration("15min") == dt.timedelta(minutes=15)
        assert parse_duration("1h") == HOUR
        assert parse_duration("2d") == dt.timedelta(days=2)
        with pytest.raises(DataError):
            parse_duration("fortnight")


class TestCombineCovariates:
    def test_static_replicated_across_time(self):
        static = np.array([[1.0, 2.0], [3.0, 4.0]])
        combined = combine_covariates(None, static, n_series=2, t_total=5)
        assert combined.values.shape == (2, 2, 5)
        np.testing.assert_array_equal(combined.values[1, 0], np.full(5, 3.0))

    def test_time_plus_static_channel_stacking(self):
        time_cov = make_time_covariates(6, dt.datetime(2020, 1, 1), HOUR)
        static = np.array([[9.0]])
        combined = combine_covariates(time_cov, static, n_series=1, t_total=6)
        assert combined.values.shape == (1, 8, 6)
        np.testing.assert_array_equal(combined.values[0, :7], time_cov.values[0])

    def test_none_when_nothing_given(self):
        assert combine_covariates(None, None, 3, 10) is None


class TestNormalize:
    def test_constant_series_hits_std_floor(self):
        m = TimeSeriesMatrix(np.full((1, 4), 2.0), train_len=4)
        whitened, state = normalize(m)
        np.testing.assert_array_equal(whitened.values, np.zeros((1, 4)))
        assert state.stds[0] == 1e-6

    def test_two_point_series_by_hand(self):
        # mean 1, population std 1 -> whitened [-1, 1]
        m = TimeSeriesMatrix(np.array([[0.0, 2.0]]), train_len=2)
        whitened, state = normalize(m)
        assert state.means[0] == 1.0 and state.stds[0] == 1.0
        np.testing.assert_array_equal(whitened.values, [[-1.0, 1.0]])

    def test_mode_none_is_identity(self):
        m = TimeSeriesMatrix(np.array([[5.0, 7.0]]), train_len=2)
        same, state = normalize(m, "none")
        np.testing.assert_array_equal(same.values, m.values)
        assert state.means[0] == 0.0 and state.stds[0] == 1.0

    def test_stats_use_training_columns_only(self):
        m = TimeSeriesMatrix(np.array([[0.0, 2.0, 100.0]]), train_len=2)
        _, state = normalize(m)
        assert state.means[0] == 1.0 and state.stds[0] == 1.0

    def test_whitened_train_stats(self):
        rng = np.random.default_rng(0)
        m = TimeSeriesMatrix(rng.normal(5, 3, size=(4, 50)), train_len=40)
        whitened, _ = normalize(m)
        train = whitened.values[:, :40]
        assert np.abs(train.mean(axis=1)).max() < 1e-9
        assert np.abs(train.std(axis=1) - 1).max() < 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(0, 10, size=(3, 12)) + rng.uniform(-5, 5, size=(3, 1))
        m = TimeSeriesMatrix(values, train_len=10)
        whitened, state = normalize(m)
        back = denormalize(whitened.values, state)
        assert np.abs(back - values).max() <= 1e-10 * max(1.0, np.abs(values).max())


class TestDenormalize:
    def test_inverse_of_hand_example(self):
        state_matrix = TimeSeriesMatrix(np.array([[0.0, 2.0]]), train_len=2)
        _, state = normalize(state_matrix)
        np.testing.assert_array_equal(denormalize(np.array([[-1.0, 1.0]]), state), [[0.0, 2.0]])

    def test_zero_maps_to_mean(self):
        m = TimeSeriesMatrix(np.array([[8.0, 12.0]]), train_len=2)
        _, state = normalize(m)
        assert denormalize(np.array([[0.0]]), state)[0, 0] == 10.0

    def test_mode_none_identity(self):
        m = TimeSeriesMatrix(np.array([[1.0, 2.0]]), train_len=2)
        _, state = normalize(m, "none")
        np.testing.assert_array_equal(denormalize(np.array([[3.5]]), state), [[3.5]])

    def test_dimension_mismatch(self):
        m = TimeSeriesMatrix(np.ones((2, 4)), train_len=4)
        _, state = normalize(m)
        with pytest.raises(DataError):
            denormalize(np.ones((3, 4)), state)


def test_covariate_tensor_broadcast():
    shared = CovariateTensor(np.arange(6, dtype=float).reshape(1, 2, 3))
    expanded = shared.expand(4)
    assert expanded.shape == (4, 2, 3)
    np.testing.assert_array_equal(expanded[2], shared.values[0])
