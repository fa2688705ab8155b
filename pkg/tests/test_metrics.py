import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glocast.data import TimeSeriesMatrix
from glocast.errors import ConfigError
from glocast.metrics import mae_rmse, mape, metric_report, smape, wape
from glocast.rolling import (
    LastValueForecaster,
    RollingProtocol,
    naive_baselines,
    run_rolling,
)


class TestWape:
    def test_perfect_prediction(self):
        y = np.array([[1.0, -2.0], [3.0, 4.0]])
        assert wape(y, y) == 0.0

    def test_hand_computed(self):
        obs = np.array([[1.0, 2.0], [3.0, 4.0]])
        pred = np.array([[2.0, 2.0], [3.0, 4.0]])
        assert wape(obs, pred) == pytest.approx(0.1, abs=1e-12)

    def test_zero_prediction_gives_one(self):
        obs = np.array([[1.0, -2.0, 5.0]])
        assert wape(obs, np.zeros_like(obs)) == pytest.approx(1.0, abs=1e-12)

    def test_all_zero_observations_error(self):
        with pytest.raises(ValueError):
            wape(np.zeros((2, 2)), np.ones((2, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            wape(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMape:
    def test_perfect(self):
        y = np.array([1.0, 2.0])
        assert mape(y, y) == 0.0

    def test_zero_cells_excluded(self):
        obs = np.array([1.0, 0.0, 2.0])
        pred = np.array([2.0, 5.0, 2.0])
        assert mape(obs, pred) == pytest.approx(0.5, abs=1e-12)

    def test_single_cell(self):
        assert mape(np.array([4.0]), np.array([2.0])) == pytest.approx(0.5, abs=1e-12)

    def test_all_zero_error(self):
        with pytest.raises(ValueError):
            mape(np.zeros(3), np.ones(3))


class TestSmape:
    def test_perfect_nonzero(self):
        y = np.array([2.0, 3.0])
        assert smape(y, y) == 0.0

    def test_single_term(self):
        assert smape(np.array([2.0]), np.array([1.0])) == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_zero_obs_cell_excluded(self):
        obs = np.array([1.0, 0.0])
        pred = np.array([1.0, 9.0])
        assert smape(obs, pred) == pytest.approx(0.0, abs=1e-12)

    def test_cancelling_cell_excluded(self):
        # obs + pred = 0 with obs nonzero: term dropped from sum and count
        obs = np.array([2.0, 2.0])
        pred = np.array([-2.0, 1.0])
        assert smape(obs, pred) == pytest.approx(2.0 / 3.0, abs=1e-12)


class TestMaeRmse:
    def test_perfect(self):
        y = np.array([1.0, 2.0])
        assert mae_rmse(y, y) == (0.0, 0.0)

    def test_hand_computed(self):
        obs = np.array([3.0, -4.0])
        mae, rmse = mae_rmse(obs, np.zeros(2))
        assert mae == pytest.approx(3.5, abs=1e-12)
        assert rmse == pytest.approx(np.sqrt(12.5), abs=1e-12)

    def test_constant_diff(self):
        obs = np.full(5, 2.0)
        mae, rmse = mae_rmse(obs, obs - 3.0)
        assert mae == pytest.approx(3.0, abs=1e-12)
        assert rmse == pytest.approx(3.0, abs=1e-12)


_alpha = st.floats(min_value=0.01, max_value=100.0).flatmap(
    lambda a: st.sampled_from([a, -a])
)


class TestScaleInvariance:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1), _alpha)
    def test_percent_metrics_invariant_and_others_linear(self, seed, alpha):
        rng = np.random.default_rng(seed)
        obs = rng.uniform(0.5, 10.0, size=(3, 4))
        pred = obs + rng.normal(0, 1, size=(3, 4))
        assert wape(alpha * obs, alpha * pred) == pytest.approx(wape(obs, pred), rel=1e-9)
        assert mape(alpha * obs, alpha * pred) == pytest.approx(mape(obs, pred), rel=1e-9)
        assert smape(alpha * obs, alpha * pred) == pytest.approx(smape(obs, pred), rel=1e-9)
        mae, rmse = mae_rmse(obs, pred)
        mae_s, rmse_s = mae_rmse(alpha * obs, alpha * pred)
        assert mae_s == pytest.approx(abs(alpha) * mae, rel=1e-9)
        assert rmse_s == pytest.approx(abs(alpha) * rmse, rel=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_wape_of_zero_prediction_is_one(self, seed):
        rng = np.random.default_rng(seed)
        obs = rng.uniform(0.1, 5.0, size=(2, 5))
        assert wape(obs, np.zeros_like(obs)) == pytest.approx(1.0, abs=1e-12)


class _OracleForecaster:
    def __init__(self, values, t0):
        self.values = values
        self.cursor = t0

    def predict(self, steps):
        out = self.values[:, self.cursor : self.cursor + steps]
        return np.array(out)

    def incorporate(self, block):
        self.cursor += block.shape[1]


class TestRunRolling:
    def test_single_window_reduces_to_one_forecast(self):
        values = np.arange(20, dtype=float).reshape(2, 10)
        data = TimeSeriesMatrix(values, train_len=6)
        proto = RollingProtocol(t0=6, tau=4, n_windows=1)
        result = run_rolling(_OracleForecaster(values, 6), data, proto)
        assert result.predictions.shape == (2, 4)
        assert len(result.per_window) == 1

    def test_perfect_oracle_scores_zero(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(1, 5, size=(3, 30))
        data = TimeSeriesMatrix(values, train_len=18)
        proto = RollingProtocol(t0=18, tau=4, n_windows=3)
        result = run_rolling(_OracleForecaster(values, 18), data, proto)
        assert result.overall["wape"] == 0.0

    def test_electricity_protocol_constants_accepted(self):
        proto = RollingProtocol(t0=25968, tau=24, n_windows=7)
        proto.validate_against(25968 + 7 * 24)
        with pytest.raises(ConfigError):
            proto.validate_against(25968 + 7 * 24 - 1)

    def test_overall_wape_is_concatenated_not_mean_of_windows(self):
        # all the error mass sits in the tiny-magnitude window, so the
        # mean of per-window WAPEs (0.25) differs from the WAPE of the
        # concatenation (1 / 202)
        values = np.array([[1.0, 1.0, 1.0, 1.0, 100.0, 100.0]])
        data = TimeSeriesMatrix(values, train_len=2)

        class SkewedErrors:
            def __init__(self):
                self.cursor = 2

            def predict(self, steps):
                truth = values[:, self.cursor : self.cursor + steps]
                pred = np.array(truth)
                if self.cursor == 2:
                    pred[0, 0] -= 1.0
                return pred

            def incorporate(self, block):
                self.cursor += block.shape[1]

        proto = RollingProtocol(t0=2, tau=2, n_windows=2)
        result = run_rolling(SkewedErrors(), data, proto)
        w1, w2 = (w["wape"] for w in result.per_window)
        assert (w1, w2) == (0.5, 0.0)
        mean_of_windows = (w1 + w2) / 2
        assert result.overall["wape"] == pytest.approx(1.0 / 202.0, abs=1e-12)
        assert abs(result.overall["wape"] - mean_of_windows) > 1e-3


class TestNaiveBaselines:
    def test_constant_series_scores_zero(self):
        values = np.full((2, 12), 7.0)
        data = TimeSeriesMatrix(values, train_len=6)
        proto = RollingProtocol(t0=6, tau=3, n_windows=2)
        results = naive_baselines(data, proto)
        assert results["last_value"].overall["wape"] == 0.0
        assert results["training_mean"].overall["wape"] == 0.0

    def test_increasing_series_favors_last_value(self):
        values = np.arange(1.0, 25.0).reshape(1, 24)
        data = TimeSeriesMatrix(values, train_len=12)
        proto = RollingProtocol(t0=12, tau=4, n_windows=3)
        results = naive_baselines(data, proto)
        assert (
            results["last_value"].overall["wape"]
            < results["training_mean"].overall["wape"]
        )

    def test_tau_one_last_value_matches_step_formula(self):
        rng = np.random.default_rng(8)
        steps = rng.normal(0, 1, size=20)
        values = (10.0 + np.cumsum(steps)).reshape(1, 20)
        data = TimeSeriesMatrix(values, train_len=10)
        proto = RollingProtocol(t0=10, tau=1, n_windows=10)
        result = naive_baselines(data, proto)["last_value"]
        diffs = np.abs(values[0, 10:] - values[0, 9:-1]).sum()
        expected = diffs / np.abs(values[0, 10:]).sum()
        assert result.overall["wape"] == pytest.approx(expected, abs=1e-12)

    def test_last_value_updates_between_windows(self):
        values = np.array([[1.0, 1.0, 5.0, 5.0, 9.0, 9.0]])
        data = TimeSeriesMatrix(values, train_len=2)
        proto = RollingProtocol(t0=2, tau=2, n_windows=2)
        fc = LastValueForecaster(values[:, :2])
        result = run_rolling(fc, data, proto)
        np.testing.assert_array_equal(result.predictions, [[1.0, 1.0, 5.0, 5.0]])


def test_metric_report_has_all_keys():
    rng = np.random.default_rng(0)
    obs = rng.uniform(1, 2, (2, 3))
    report = metric_report(obs, obs * 1.1)
    assert set(report) == {"wape", "mape", "smape", "mae", "rmse"}
