"""Adapters exposing trained models through the rolling-evaluation
protocol (predict a window, incorporate revealed truth).

All adapters accept and produce values on the original data scale; when
a whitening state is supplied the translation happens inside."""

from __future__ import annotations

import numpy as np

from .data import CovariateTensor, NormalizationState, denormalize
from .dln import DlnNetwork, dln_rollout_batch
from .factorization import FactorModel, predict_global, rolling_update
from .hybrid import DeepGloModel, incorporate_block, predict_deepglo_components
from .tcn import TcnNetwork, rollout_batch


def _whiten(block: np.ndarray, state: NormalizationState | None) -> np.ndarray:
    if state is None or state.mode == "none":
        return np.asarray(block, dtype=np.float64)
    return (np.asarray(block, dtype=np.float64) - state.means[:, None]) / state.stds[:, None]


def _color(block: np.ndarray, state: NormalizationState | None) -> np.ndarray:
    if state is None:
        return block
    return denormalize(block, state)


class LocalTcnForecaster:
    """A trained network rolling forward on its own history."""

    def __init__(
        self,
        net: TcnNetwork,
        history: np.ndarray,
        covariates: CovariateTensor | None = None,
        norm_state: NormalizationState | None = None,
    ):
        self.net = net
        self.history = np.array(history, dtype=np.float64)
        self.covariates = covariates
        self.norm_state = norm_state

    def _future_covariates(self, steps: int) -> np.ndarray | None:
        if self.covariates is None:
            return None
        t_cur = self.history.shape[1]
        cov = self.covariates.expand(self.history.shape[0])
        if cov.shape[2] < t_cur + steps:
            raise ValueError(
                f"covariates cover {cov.shape[2]} steps, need {t_cur + steps}"
            )
        return cov[:, :, t_cur : t_cur + steps]

    def predict(self, steps: int) -> np.ndarray:
        hist = _whiten(self.history, self.norm_state)[:, None, :]
        if self.covariates is not None:
            cov = self.covariates.expand(self.history.shape[0])
            hist = np.concatenate([hist, cov[:, :, : self.history.shape[1]]], axis=1)
        preds = rollout_batch(self.net, hist, steps, self._future_covariates(steps))
        return _color(preds, self.norm_state)

    def incorporate(self, block: np.ndarray) -> None:
        self.history = np.concatenate([self.history, block], axis=1)


class DlnForecaster:
    """Mean-plus-residual twin network on its own history."""

    def __init__(self, dln: DlnNetwork, history, norm_state=None):
        self.dln = dln
        self.history = np.array(history, dtype=np.float64)
        self.norm_state = norm_state

    def predict(self, steps: int) -> np.ndarray:
        hist = _whiten(self.history, self.norm_state)[:, None, :]
        return _color(dln_rollout_batch(self.dln, hist, steps), self.norm_state)

    def incorporate(self, block: np.ndarray) -> None:
        self.history = np.concatenate([self.history, block], axis=1)


class GlobalFactorForecaster:
    """Factorization model updated by rolling basis extension."""

    def __init__(self, model: FactorModel, norm_state=None):
        self.model = model
        self.norm_state = norm_state
        self.update_info = []

    def predict(self, steps: int) -> np.ndarray:
        return _color(predict_global(self.model, steps), self.norm_state)

    def incorporate(self, block: np.ndarray) -> None:
        self.update_info.append(
            rolling_update(self.model, _whiten(block, self.norm_state))
        )


class DeepGloForecaster:
    """Hybrid model; incorporation extends both the basis and the raw
    history, never the network weights."""

    def __init__(self, model: DeepGloModel, norm_state=None):
        self.model = model
        self.norm_state = norm_state
        self.update_info = []
        self._components: dict[str, np.ndarray] = {}

    def predict(self, steps: int) -> np.ndarray:
        preds, comp_global, comp_local = predict_deepglo_components(self.model, steps)
        self._components = {}
        if comp_global is not None:
            self._components["global"] = _color(comp_global, self.norm_state)
        if comp_local is not None:
            self._components["local"] = _color(comp_local, self.norm_state)
        return _color(preds, self.norm_state)

    def last_components(self) -> dict[str, np.ndarray]:
        return self._components

    def incorporate(self, block: np.ndarray) -> None:
        self.update_info.append(
            incorporate_block(self.model, _whiten(block, self.norm_state))
        )
