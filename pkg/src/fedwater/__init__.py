"""Federated LSTM forecasting of monthly building water consumption."""

from .estimators import (
    FederatedLSTMForecaster,
    LSTMRegressor,
    MinMaxSeriesScaler,
    SlidingWindowTransformer,
)
from .exceptions import DataError, FedWaterError, NoEligibleClientsError, NumericalError
from .federation import ClientState, RoundConfig, TrainingLog, run_centralized, run_federated
from .ingest import Month, SyntheticFleetConfig, TimeSeries, generate_synthetic_fleet, parse_consumption_csv
from .lstm import ModelWeights, init_weights
from .netload import NetLoadReport, Topology

__version__ = "0.1.0"

__all__ = [
    "ClientState",
    "DataError",
    "FedWaterError",
    "FederatedLSTMForecaster",
    "LSTMRegressor",
    "MinMaxSeriesScaler",
    "ModelWeights",
    "Month",
    "NetLoadReport",
    "NoEligibleClientsError",
    "NumericalError",
    "RoundConfig",
    "SlidingWindowTransformer",
    "SyntheticFleetConfig",
    "TimeSeries",
    "Topology",
    "TrainingLog",
    "generate_synthetic_fleet",
    "init_weights",
    "parse_consumption_csv",
    "run_centralized",
    "run_federated",
]
