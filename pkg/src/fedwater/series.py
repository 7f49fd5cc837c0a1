"""Scaling, sliding windows, date splits and forecast-error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .ingest import Month, TimeSeries


@dataclass(frozen=True)
class NormalizationParams:
    min: float
    max: float

    def __post_init__(self):
        if self.min > self.max:
            raise ValueError(f"min {self.min} exceeds max {self.max}")


def _as_values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


def fit_normalization(series) -> NormalizationParams:
    values = _as_values(series)
    if values.size == 0:
        raise DataError("cannot normalize an empty series")
    return NormalizationParams(float(values.min()), float(values.max()))


def apply_normalization(values, params: NormalizationParams) -> np.ndarray:
    """Scale with already-fitted params; out-of-range inputs leave [0, 1]."""
    values = _as_values(values)
    span = params.max - params.min
    if span == 0:
        return np.zeros_like(values, dtype=np.float64)
    return (values - params.min) / span


def normalize(series) -> tuple[np.ndarray, NormalizationParams]:
    """Min-max scale ``series`` into [0, 1]; a constant series maps to zeros."""
    params = fit_normalization(series)
    return apply_normalization(series, params), params


def denormalize(values, params: NormalizationParams) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values * (params.max - params.min) + params.min


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Supervised (look-back window -> next value) samples.

    ``inputs`` has shape ``(n_samples, lookback)`` and ``targets`` shape
    ``(n_samples,)``, both in chronological order.
    """

    lookback: int
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.lookback:
            raise ValueError(
                f"inputs must have shape (n, {self.lookback}), got {self.inputs.shape}"
            )
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError("targets must have one entry per input window")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def samples(self) -> list[tuple[np.ndarray, float]]:
        return [(x, float(y)) for x, y in zip(self.inputs, self.targets)]

    @classmethod
    def concat(cls, datasets: list["WindowedDataset"]) -> "WindowedDataset":
        if not datasets:
            raise DataError("nothing to concatenate")
        lookbacks = {d.lookback for d in datasets}
        if len(lookbacks) != 1:
            raise ValueError(f"mixed lookbacks {sorted(lookbacks)}")
        return cls(
            datasets[0].lookback,
            np.concatenate([d.inputs for d in datasets]),
            np.concatenate([d.targets for d in datasets]),
        )


def make_windows(series, lookback: int) -> WindowedDataset:
    values = _as_values(series)
    if lookback < 1:
        raise ValueError("lookback must be a positive integer")
    if values.size < lookback + 1:
        raise DataError(
            f"series of length {values.size} is too short for lookback {lookback}; "
            f"need at least {lookback + 1} values"
        )
    n = values.size - lookback
    inputs = np.lib.stride_tricks.sliding_window_view(values, lookback)[:n].copy()
    targets = values[lookback:].copy()
    return WindowedDataset(lookback, inputs, targets)


def split_by_date(series: TimeSeries, split_month: Month) -> tuple[TimeSeries, TimeSeries]:
    """Train on months before ``split_month``, test on the rest."""
    k = split_month - series.start_month
    if not 0 < k < len(series):
        raise DataError(
            f"split month {split_month} must fall strictly inside "
            f"{series.start_month}..{series.end_month} of {series.building_id!r}"
        )
    train = TimeSeries(series.building_id, series.start_month, series.values[:k])
    test = TimeSeries(series.building_id, split_month, series.values[k:])
    return train, test


@dataclass(frozen=True)
class EvalReport:
    mape: float
    rmse: float
    n_points: int
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "mape": self.mape,
            "rmse": self.rmse,
            "n_points": self.n_points,
            "n_excluded": self.n_excluded,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(float(data["mape"]), float(data["rmse"]), int(data["n_points"]),
                   int(data.get("n_excluded", 0)))


def _paired(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise ValueError("need at least one point")
    return a, p


def _mape_terms(actual, predicted) -> tuple[float, int]:
    a, p = _paired(actual, predicted)
    keep = a != 0
    if not keep.any():
        raise ValueError("every actual value is zero; MAPE is undefined")
    terms = np.abs(a[keep] - p[keep]) / np.abs(a[keep])
    return 100.0 * math.fsum(terms) / terms.size, int((~keep).sum())


def mape(actual, predicted) -> float:
    """Mean absolute percentage error in percent, skipping zero actuals."""
    return _mape_terms(actual, predicted)[0]


def rmse(actual, predicted) -> float:
    a, p = _paired(actual, predicted)
    return math.sqrt(math.fsum((a - p) ** 2) / a.size)


def evaluate(actual, predicted) -> EvalReport:
    value, excluded = _mape_terms(actual, predicted)
    return EvalReport(value, rmse(actual, predicted), int(np.size(actual)), excluded)
