"""scikit-learn compatible wrappers around the functional core.

``MinMaxSeriesScaler`` and ``SlidingWindowTransformer`` cover preprocessing,
``LSTMRegressor`` is a plain window -> next-value regressor, and
``FederatedLSTMForecaster`` fits a global model over a fleet of building
series by simulated federated averaging.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import federation
from .experiment import FleetEval, build_clients, evaluate_model
from .ingest import Month, TimeSeries
from .lstm import ModelWeights, forecast_horizon, init_weights, predict
from .netload import Topology
from .series import (
    WindowedDataset,
    apply_normalization,
    denormalize,
    fit_normalization,
    make_windows,
    split_by_date,
)


def _check_series(X) -> np.ndarray:
    """Accept a 1-D sequence or an ``(n, 1)`` column and return it flat."""
    if isinstance(X, TimeSeries):
        X = X.values
    arr = check_array(X, ensure_2d=False, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"expected a single series column, got shape {arr.shape}")
        arr = arr[:, 0]
    return arr


class MinMaxSeriesScaler(TransformerMixin, BaseEstimator):
    """Min-max scaling of one series; constant input maps to zeros."""

    def fit(self, X, y=None):
        self.params_ = fit_normalization(_check_series(X))
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return apply_normalization(_check_series(X), self.params_)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return denormalize(_check_series(X), self.params_)


class SlidingWindowTransformer(TransformerMixin, BaseEstimator):
    """Turn a series into look-back windows; ``split`` also returns targets."""

    def __init__(self, lookback: int = 12):
        self.lookback = lookback

    def fit(self, X, y=None):
        return self

    def split(self, X) -> tuple[np.ndarray, np.ndarray]:
        ds = make_windows(_check_series(X), self.lookback)
        return ds.inputs, ds.targets

    def transform(self, X):
        return self.split(X)[0]


class LSTMRegressor(RegressorMixin, BaseEstimator):
    """Full-batch SGD LSTM mapping ``(n, L)`` windows to next values."""

    def __init__(self, hidden_size: int = 8, eta: float = 0.5, epochs: int = 100,
                 clip_norm: float | None = None, random_state: int = 0,
                 warm_start: bool = False):
        self.hidden_size = hidden_size
        self.eta = eta
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.warm_start = warm_start

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if self.warm_start and hasattr(self, "weights_"):
            start = self.weights_
        else:
            start = init_weights(self.hidden_size, self.random_state)
        ds = WindowedDataset(X.shape[1], X, y.astype(np.float64))
        self.weights_, self.loss_ = federation.train_local(
            start, ds, self.eta, self.epochs, self.clip_norm
        )
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_weights(cls, weights: ModelWeights, lookback: int, **params) -> "LSTMRegressor":
        est = cls(hidden_size=weights.hidden_size, **params)
        est.weights_ = weights
        est.n_features_in_ = lookback
        return est

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} lags, got {X.shape[1]}")
        return predict(self.weights_, X)

    def forecast(self, seed_window, horizon: int):
        check_is_fitted(self, "weights_")
        return forecast_horizon(self.weights_, seed_window, horizon)


class FederatedLSTMForecaster(BaseEstimator):
    """Federated averaging of an LSTM forecaster over building series.

    ``fit`` takes a list of :class:`TimeSeries`, one per client. Each is
    split at ``split_month``, scaled on its own training span, windowed and
    handed to a simulated client. After fitting, ``weights_`` holds the
    global model and ``log_`` the per-round :class:`TrainingLog`; no client
    data is kept on the estimator.
    """

    def __init__(self, hidden_size: int = 8, lookback: int = 12, t_max: int = 20,
                 subset_size: int = 5, eta: float = 0.5, local_epochs: int = 5,
                 threshold: float = 0.05, eligibility_window: int = 12,
                 filter_mode: str = "pre", split_month: str = "2018-01",
                 early_stop: bool = False, clip_norm: float | None = None,
                 random_state: int = 0, init_seed: int = 0, n_jobs: int = 1):
        self.hidden_size = hidden_size
        self.lookback = lookback
        self.t_max = t_max
        self.subset_size = subset_size
        self.eta = eta
        self.local_epochs = local_epochs
        self.threshold = threshold
        self.eligibility_window = eligibility_window
        self.filter_mode = filter_mode
        self.split_month = split_month
        self.early_stop = early_stop
        self.clip_norm = clip_norm
        self.random_state = random_state
        self.init_seed = init_seed
        self.n_jobs = n_jobs

    def round_config(self) -> federation.RoundConfig:
        return federation.RoundConfig(
            t_max=self.t_max, subset_size=self.subset_size, eta=self.eta,
            local_epochs=self.local_epochs, threshold=self.threshold,
            rng_seed=self.random_state, eligibility_window=self.eligibility_window,
            filter_mode=self.filter_mode, early_stop=self.early_stop,
            clip_norm=self.clip_norm,
        )

    def _clients(self, X: Sequence[TimeSeries], topology: Topology | None = None):
        if not X or not all(isinstance(s, TimeSeries) for s in X):
            raise TypeError("X must be a nonempty list of TimeSeries")
        return build_clients(X, Month.parse(self.split_month), self.lookback, topology)

    def fit(self, X: Sequence[TimeSeries], y=None, topology: Topology | None = None):
        clients = self._clients(X, topology)
        initial = init_weights(self.hidden_size, self.init_seed)
        self.weights_, self.log_ = federation.run_federated(
            clients, self.round_config(), initial, max_workers=self.n_jobs
        )
        self.client_ids_ = [c.client_id for c in clients]
        self.n_features_in_ = self.lookback
        return self

    def predict(self, X):
        """One-step predictions for normalized ``(n, lookback)`` windows."""
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.lookback:
            raise ValueError(f"expected {self.lookback} lags, got {X.shape[1]}")
        return predict(self.weights_, X)

    def forecast(self, series: TimeSeries, horizon: int) -> np.ndarray:
        """Denormalized forecasts for the months following the training span."""
        check_is_fitted(self, "weights_")
        train, _ = split_by_date(series, Month.parse(self.split_month))
        params = fit_normalization(train)
        seed = apply_normalization(train, params)[-self.lookback :]
        return denormalize(forecast_horizon(self.weights_, seed, horizon), params)

    def evaluate(self, X: Sequence[TimeSeries]) -> FleetEval:
        check_is_fitted(self, "weights_")
        return evaluate_model(self.weights_, self._clients(X))

    def score(self, X: Sequence[TimeSeries], y=None) -> float:
        """Negative aggregate test MAPE, so that higher is better."""
        return -self.evaluate(X).aggregate.mape

    def personalize(self, series: TimeSeries, epochs: int | None = None,
                    eta: float | None = None) -> LSTMRegressor:
        """Fine-tune a copy of the global model on one building's training span."""
        check_is_fitted(self, "weights_")
        client = self._clients([series])[0]
        weights = federation.personalize(
            self.weights_, client, self.eta if eta is None else eta,
            self.local_epochs if epochs is None else epochs, self.clip_norm,
        )
        return LSTMRegressor.from_weights(weights, self.lookback, eta=self.eta,
                                          clip_norm=self.clip_norm)
