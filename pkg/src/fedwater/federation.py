"""Federated averaging over simulated building clients.

Each round the server samples eligible clients, broadcasts the global
weights, lets every selected client run a few full-batch SGD epochs on its
own windows, and folds the returned weights into a sample-count weighted
mean. Only weights, counts, ids and hop distances ever reach the server.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import DataError, NoEligibleClientsError, NumericalError
from .ingest import Month, TimeSeries
from .lstm import ModelWeights, average_gradient, clip_by_norm, sgd_step
from .series import (
    NormalizationParams,
    WindowedDataset,
    apply_normalization,
    fit_normalization,
    make_windows,
    split_by_date,
)

logger = logging.getLogger(__name__)

FILTER_MODES = ("pre", "post")


@dataclass(eq=False)
class ClientState:
    """Everything a simulated building keeps on its own edge device."""

    client_id: str
    train: WindowedDataset
    test: WindowedDataset
    params: NormalizationParams
    hops: int
    train_normalized: np.ndarray
    test_values: np.ndarray
    train_start: Month
    test_start: Month

    def __post_init__(self):
        if self.hops < 1:
            raise ValueError(f"client {self.client_id!r}: hops must be >= 1")

    @property
    def m_s(self) -> int:
        return len(self.train)

    @property
    def lookback(self) -> int:
        return self.train.lookback

    @property
    def seed_window(self) -> np.ndarray:
        return self.train_normalized[-self.lookback :]


def make_client(series: TimeSeries, split_month: Month, lookback: int, hops: int = 1) -> ClientState:
    """Split, scale on the training span only, and window one building."""
    train, test = split_by_date(series, split_month)
    params = fit_normalization(train)
    train_norm = apply_normalization(train, params)
    test_norm = apply_normalization(test, params)
    train_ds = make_windows(train_norm, lookback)
    test_ds = make_windows(np.concatenate([train_norm[-lookback:], test_norm]), lookback)
    return ClientState(
        client_id=series.building_id,
        train=train_ds,
        test=test_ds,
        params=params,
        hops=int(hops),
        train_normalized=train_norm,
        test_values=test.values.copy(),
        train_start=train.start_month,
        test_start=test.start_month,
    )


@dataclass(frozen=True)
class RoundConfig:
    t_max: int = 20
    subset_size: int = 5
    eta: float = 0.5
    local_epochs: int = 5
    threshold: float = 0.05
    rng_seed: int = 0
    eligibility_window: int = 12
    filter_mode: str = "pre"
    early_stop: bool = False
    clip_norm: float | None = None

    def __post_init__(self):
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.eligibility_window < 1:
            raise ValueError("eligibility_window must be >= 1")
        if self.filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    weights: ModelWeights
    m_s: int
    mean_loss: float = float("nan")


@dataclass
class RoundRecord:
    t: int
    selected: list[str]
    hops: list[int]
    mean_local_loss: float | None
    global_eval: dict | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "selected": list(self.selected),
            "hops": list(self.hops),
            "mean_local_loss": self.mean_local_loss,
            "global_eval": self.global_eval,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RoundRecord":
        return cls(
            int(data["t"]),
            [str(s) for s in data["selected"]],
            [int(h) for h in data["hops"]],
            data.get("mean_local_loss"),
            data.get("global_eval"),
        )


@dataclass
class TrainingLog:
    rounds: list[RoundRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rounds)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrainingLog):
            return NotImplemented
        return [r.to_dict() for r in self.rounds] == [r.to_dict() for r in other.rounds]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.rounds)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainingLog":
        try:
            rounds = [RoundRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed training log: {exc}") from None
        return cls(rounds)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainingLog":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def monthly_load_delta(client: ClientState, window_months: int = 12) -> float:
    """Range of normalized consumption over the trailing training months."""
    series = client.train_normalized
    if series.size < 2:
        raise DataError(f"client {client.client_id!r} needs at least 2 training months")
    tail = series[-window_months:]
    return float(tail.max() - tail.min())


def is_eligible(client: ClientState, config: RoundConfig) -> bool:
    return client.m_s >= 1 and monthly_load_delta(client, config.eligibility_window) > config.threshold


def select_clients(clients: Sequence[ClientState], config: RoundConfig, t: int) -> list[ClientState]:
    """Sample this round's subset; an empty list means the round is skipped.

    The generator is keyed on ``(rng_seed, t)`` so a round's pick does not
    depend on how many rounds ran before it.
    """
    if not clients:
        raise DataError("no clients to select from")
    rng = np.random.default_rng([config.rng_seed, t])
    pool = sorted(clients, key=lambda c: c.client_id)
    if config.filter_mode == "pre":
        pool = [c for c in pool if is_eligible(c, config)]
        k = min(config.subset_size, len(pool))
        picked = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)] if k else []
    else:
        k = min(config.subset_size, len(pool))
        picked = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]
        picked = [c for c in picked if is_eligible(c, config)]
    return sorted(picked, key=lambda c: c.client_id)


def train_local(
    weights: ModelWeights,
    dataset: WindowedDataset,
    eta: float,
    epochs: int,
    clip_norm: float | None = None,
) -> tuple[ModelWeights, float]:
    """Run ``epochs`` full-batch SGD steps; returns weights and last mean loss."""
    if len(dataset) == 0:
        raise DataError("empty training set")
    last_loss = float("nan")
    for _ in range(epochs):
        last_loss, g = average_gradient(weights, dataset)
        weights = sgd_step(weights, clip_by_norm(g, clip_norm), eta)
    return weights, last_loss


def local_update(
    client: ClientState,
    global_weights: ModelWeights,
    eta: float,
    epochs: int,
    clip_norm: float | None = None,
) -> ClientUpdate:
    weights, last_loss = train_local(global_weights, client.train, eta, epochs, clip_norm)
    return ClientUpdate(client.client_id, weights, client.m_s, last_loss)


def aggregate(updates: Iterable[ClientUpdate]) -> ModelWeights:
    """Sample-count weighted mean of client weights, folded in id order."""
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        raise ValueError("cannot aggregate zero updates")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids in updates: {ids}")
    H = updates[0].weights.hidden_size
    P = updates[0].weights.n_params
    for u in updates:
        if u.weights.hidden_size != H or u.weights.n_params != P:
            raise ValueError(f"update from {u.client_id!r} has mismatched dimensions")
        if u.m_s < 1:
            raise ValueError(f"update from {u.client_id!r} has m_s={u.m_s}")
    M = sum(u.m_s for u in updates)
    acc = np.zeros(P)
    for u in updates:
        acc += (u.m_s / M) * u.weights.flat
    return ModelWeights(H, acc)


def _check_finite(w: ModelWeights, where: str) -> None:
    if not np.all(np.isfinite(w.flat)):
        raise NumericalError(f"non-finite weights after {where}")


def run_federated(
    clients: Sequence[ClientState],
    config: RoundConfig,
    initial: ModelWeights,
    evaluate: Callable[[ModelWeights], dict] | None = None,
    max_workers: int = 1,
) -> tuple[ModelWeights, TrainingLog]:
    if not clients:
        raise DataError("run_federated needs at least one client")
    log = TrainingLog()
    weights = initial
    participated = False

    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        for t in range(1, config.t_max + 1):
            selected = select_clients(clients, config, t)
            if not selected:
                logger.info("round %d: no eligible clients, skipped", t)
                log.rounds.append(RoundRecord(t, [], [], None, None))
                continue
            participated = True

            def work(c: ClientState) -> ClientUpdate:
                return local_update(c, weights, config.eta, config.local_epochs, config.clip_norm)

            updates = list(pool.map(work, selected)) if pool else [work(c) for c in selected]
            new_weights = aggregate(updates)
            _check_finite(new_weights, f"round {t}")

            losses = [u.mean_loss for u in updates]
            mean_loss = float(np.mean(losses)) if config.local_epochs > 0 else None
            global_eval = evaluate(new_weights) if evaluate is not None else None
            log.rounds.append(
                RoundRecord(t, [c.client_id for c in selected], [c.hops for c in selected],
                            mean_loss, global_eval)
            )
            logger.debug("round %d: %s loss=%s", t, [c.client_id for c in selected], mean_loss)

            if config.early_stop:
                change = np.linalg.norm(new_weights.flat - weights.flat)
                scale = max(np.linalg.norm(weights.flat), np.finfo(float).tiny)
                if change / scale < 1e-5:
                    weights = new_weights
                    logger.info("round %d: global model stabilized, stopping", t)
                    break
            weights = new_weights
    finally:
        if pool is not None:
            pool.shutdown()

    if config.t_max > 0 and not participated:
        raise NoEligibleClientsError("no eligible clients in any round")
    return weights, log


def run_centralized(
    clients: Sequence[ClientState],
    eta: float,
    epochs: int,
    initial: ModelWeights,
    clip_norm: float | None = None,
) -> ModelWeights:
    """Pool every client's windows (id order, chronological) and train."""
    ordered = sorted(clients, key=lambda c: c.client_id)
    datasets = [c.train for c in ordered if len(c.train)]
    if not datasets:
        raise DataError("no training data to pool")
    pooled = WindowedDataset.concat(datasets)
    weights, _ = train_local(initial, pooled, eta, epochs, clip_norm)
    _check_finite(weights, "centralized training")
    return weights


def personalize(
    global_weights: ModelWeights,
    client: ClientState,
    eta: float,
    epochs: int,
    clip_norm: float | None = None,
) -> ModelWeights:
    """Fine-tune a copy of the global model on one client's own windows."""
    return local_update(client, global_weights, eta, epochs, clip_norm).weights
