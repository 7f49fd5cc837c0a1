"""Experiment wiring: spec files, fleet construction and evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import DataError
from .federation import ClientState, RoundConfig, make_client
from .ingest import (
    Month,
    SyntheticFleetConfig,
    TimeSeries,
    generate_synthetic_fleet,
    parse_consumption_csv,
)
from .lstm import ModelWeights, forecast_horizon
from .netload import Topology
from .series import EvalReport, denormalize, evaluate


@dataclass(frozen=True)
class PhaseShift:
    """Replace the last ``n_shifted`` buildings with phase-shifted profiles."""

    n_shifted: int = 5
    shift_months: float = 3.0


def phase_shifted_fleet(config: SyntheticFleetConfig, shift: PhaseShift) -> list[TimeSeries]:
    if not 0 <= shift.n_shifted <= config.n_buildings:
        raise DataError("n_shifted must lie between 0 and n_buildings")
    fleet = generate_synthetic_fleet(config)
    if shift.n_shifted == 0:
        return fleet
    lo, hi = config.phase_range
    shifted_cfg = replace(
        config,
        n_buildings=shift.n_shifted,
        phase_range=(lo + shift.shift_months, hi + shift.shift_months),
        rng_seed=config.rng_seed + 1,
    )
    keep = fleet[: config.n_buildings - shift.n_shifted]
    donors = generate_synthetic_fleet(shifted_cfg)
    renamed = [
        TimeSeries(fleet[len(keep) + k].building_id, s.start_month, s.values)
        for k, s in enumerate(donors)
    ]
    return keep + renamed


@dataclass(frozen=True)
class ExperimentSpec:
    csv: str | None = None
    columns: Mapping[str, str] | None = None
    gap_policy: str = "linear-interpolate"
    synthetic: SyntheticFleetConfig | None = None
    phase_shift: PhaseShift | None = None
    hidden_size: int = 8
    lookback: int = 12
    init_seed: int = 0
    rounds: RoundConfig = field(default_factory=RoundConfig)
    split_month: str = "2018-01"
    topology: str | None = None
    out: str = "out"
    centralized_epochs: int | None = None
    personalize_epochs: int | None = None
    personalize_eta: float | None = None

    def __post_init__(self):
        if (self.csv is None) == (self.synthetic is None):
            raise DataError("experiment spec needs exactly one data source: csv or synthetic")
        if self.hidden_size < 1 or self.lookback < 1:
            raise DataError("hidden_size and lookback must be positive")

    @property
    def split(self) -> Month:
        return Month.parse(self.split_month)

    @property
    def centralized_epoch_count(self) -> int:
        if self.centralized_epochs is not None:
            return self.centralized_epochs
        return self.rounds.t_max * self.rounds.local_epochs

    @property
    def personalize_epoch_count(self) -> int:
        if self.personalize_epochs is not None:
            return self.personalize_epochs
        return self.rounds.local_epochs

    @property
    def personalize_learning_rate(self) -> float:
        if self.personalize_eta is not None:
            return self.personalize_eta
        return self.rounds.eta

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | Path = ".") -> "ExperimentSpec":
        data = dict(data)
        base = Path(base_dir)
        known = {f.name for f in fields(cls)} | {"data", "model"}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown experiment spec keys: {sorted(unknown)}")

        kwargs: dict = {}
        source = dict(data.pop("data", {}))
        model = dict(data.pop("model", {}))
        kwargs.update(source)
        kwargs.update(model)
        kwargs.update(data)

        synth = kwargs.get("synthetic")
        if isinstance(synth, str):
            kwargs["synthetic"] = SyntheticFleetConfig.load(base / synth)
        elif isinstance(synth, Mapping):
            kwargs["synthetic"] = SyntheticFleetConfig.from_dict(synth)
        if isinstance(kwargs.get("phase_shift"), Mapping):
            kwargs["phase_shift"] = PhaseShift(**kwargs["phase_shift"])
        if isinstance(kwargs.get("rounds"), Mapping):
            try:
                kwargs["rounds"] = RoundConfig(**kwargs["rounds"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"invalid rounds config: {exc}") from None
        for key in ("csv", "topology"):
            if kwargs.get(key):
                kwargs[key] = str(base / kwargs[key])
        kwargs["out"] = str(base / kwargs.get("out", "out"))
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise DataError(f"invalid experiment spec: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"spec {path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        out = {
            "data": {},
            "model": {"hidden_size": self.hidden_size, "lookback": self.lookback,
                      "init_seed": self.init_seed},
            "rounds": asdict(self.rounds),
            "split_month": self.split_month,
            "topology": self.topology,
            "out": self.out,
            "centralized_epochs": self.centralized_epochs,
            "personalize_epochs": self.personalize_epochs,
            "personalize_eta": self.personalize_eta,
        }
        if self.csv is not None:
            out["data"] = {"csv": self.csv, "columns": dict(self.columns or {}),
                           "gap_policy": self.gap_policy}
        else:
            out["data"] = {"synthetic": self.synthetic.to_dict()}
            if self.phase_shift is not None:
                out["data"]["phase_shift"] = asdict(self.phase_shift)
        return out


def load_series(spec: ExperimentSpec) -> list[TimeSeries]:
    if spec.csv is not None:
        return parse_consumption_csv(spec.csv, spec.columns, spec.gap_policy)
    if spec.phase_shift is not None:
        return phase_shifted_fleet(spec.synthetic, spec.phase_shift)
    return generate_synthetic_fleet(spec.synthetic)


def load_topology(spec: ExperimentSpec, client_ids: Sequence[str]) -> Topology:
    if spec.topology is None:
        return Topology.uniform(client_ids)
    return Topology.load(spec.topology)


def build_clients(
    series: Sequence[TimeSeries],
    split_month: Month,
    lookback: int,
    topology: Topology | None = None,
) -> list[ClientState]:
    clients = []
    for s in sorted(series, key=lambda s: s.building_id):
        hops = topology.hop(s.building_id) if topology is not None else 1
        clients.append(make_client(s, split_month, lookback, hops))
    return clients


def clients_from_spec(spec: ExperimentSpec) -> list[ClientState]:
    series = load_series(spec)
    topology = load_topology(spec, [s.building_id for s in series])
    return build_clients(series, spec.split, spec.lookback, topology)


def forecast_test_span(w: ModelWeights, clients: Sequence[ClientState]) -> dict[str, np.ndarray]:
    """Denormalized iterated forecasts over each client's test months.

    Clients sharing a test length are forecast together in one batch.
    """
    by_len: dict[int, list[ClientState]] = {}
    for c in clients:
        by_len.setdefault(c.test_values.size, []).append(c)
    out = {}
    for horizon, group in by_len.items():
        seeds = np.stack([c.seed_window for c in group])
        preds = forecast_horizon(w, seeds, horizon)
        for c, p in zip(group, preds):
            out[c.client_id] = denormalize(p, c.params)
    return out


def persistence_forecast(clients: Sequence[ClientState]) -> dict[str, np.ndarray]:
    """Repeat each client's last training value over its test span."""
    return {
        c.client_id: np.full(c.test_values.size, denormalize(c.seed_window[-1:], c.params)[0])
        for c in clients
    }


@dataclass
class FleetEval:
    aggregate: EvalReport
    clients: dict[str, EvalReport]

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "clients": {cid: r.to_dict() for cid, r in sorted(self.clients.items())},
        }


def evaluate_forecasts(clients: Sequence[ClientState], forecasts: Mapping[str, np.ndarray]) -> FleetEval:
    ordered = sorted(clients, key=lambda c: c.client_id)
    per_client = {c.client_id: evaluate(c.test_values, forecasts[c.client_id]) for c in ordered}
    actual = np.concatenate([c.test_values for c in ordered])
    predicted = np.concatenate([forecasts[c.client_id] for c in ordered])
    return FleetEval(evaluate(actual, predicted), per_client)


def evaluate_model(w: ModelWeights, clients: Sequence[ClientState]) -> FleetEval:
    return evaluate_forecasts(clients, forecast_test_span(w, clients))


def evaluate_persistence(clients: Sequence[ClientState]) -> FleetEval:
    return evaluate_forecasts(clients, persistence_forecast(clients))


def round_evaluator(clients: Sequence[ClientState]):
    """Per-round hook reporting only aggregate metrics back to the server."""

    def hook(w: ModelWeights) -> dict:
        report = evaluate_model(w, clients).aggregate
        return {"mape": report.mape, "rmse": report.rmse}

    return hook
