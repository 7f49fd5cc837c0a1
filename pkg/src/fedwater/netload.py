"""Network-load accounting for centralized upload versus federated rounds.

Loads are in byte-hops: every payload length is multiplied by the number
of hops it travels. Reals are counted as 8 bytes; headers are ignored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .exceptions import DataError, NumericalError
from .federation import ClientState, TrainingLog
from .lstm import ModelWeights

BYTES_PER_REAL = 8
ACCOUNTING_MODES = ("single", "bidirectional")


@dataclass(frozen=True)
class Topology:
    hops: dict[str, int]

    def __post_init__(self):
        for cid, h in self.hops.items():
            if int(h) != h or h < 1:
                raise DataError(f"hop count for {cid!r} must be a positive integer, got {h!r}")

    @classmethod
    def uniform(cls, client_ids: Iterable[str], hops: int = 1) -> "Topology":
        return cls({cid: hops for cid in client_ids})

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"topology file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise DataError(f"topology file {path} must hold a JSON object")
        return cls({str(k): v for k, v in data.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.hops, sort_keys=True) + "\n", encoding="utf-8")

    def hop(self, client_id: str) -> int:
        try:
            return int(self.hops[client_id])
        except KeyError:
            raise DataError(f"topology has no hop entry for client {client_id!r}") from None

    def scaled(self, factor: int) -> "Topology":
        return Topology({cid: h * factor for cid, h in self.hops.items()})


@dataclass(frozen=True)
class NetLoadReport:
    q_c: float
    q_f: float
    r: float
    model_length_bytes: int
    accounting_mode: str = "single"
    data_lengths: Mapping[str, int] | None = None

    def to_dict(self) -> dict:
        return {
            "q_c": self.q_c,
            "q_f": self.q_f,
            "r": self.r,
            "model_length_bytes": self.model_length_bytes,
            "accounting_mode": self.accounting_mode,
        }


def data_length(client: ClientState) -> int:
    """Bytes of the raw training series a client would upload."""
    return BYTES_PER_REAL * int(client.train_normalized.size)


def model_length(w: ModelWeights) -> int:
    return BYTES_PER_REAL * w.n_params


def centralized_load(data_lengths: Mapping[str, int], topology: Topology) -> float:
    """Sum of data length times hops over every client in the fleet."""
    return float(sum(int(length) * topology.hop(cid) for cid, length in sorted(data_lengths.items())))


def federated_load(
    log: TrainingLog,
    model_length_bytes: int,
    topology: Topology | None = None,
    accounting: str = "single",
) -> float:
    """Model length times total hops over every (round, client) participation.

    Hops come from ``topology`` when given, else from the log itself.
    ``"bidirectional"`` counts the broadcast and the upload separately.
    """
    if accounting not in ACCOUNTING_MODES:
        raise ValueError(f"accounting must be one of {ACCOUNTING_MODES}")
    total_hops = 0
    for record in log.rounds:
        if topology is None:
            total_hops += sum(record.hops)
        else:
            total_hops += sum(topology.hop(cid) for cid in record.selected)
    transfers = 2 if accounting == "bidirectional" else 1
    return float(transfers * model_length_bytes * total_hops)


def reward(q_f: float, q_c: float) -> float:
    """Fraction of centralized load saved; negative when federation costs more."""
    if q_c <= 0:
        raise NumericalError("reward is undefined when the centralized load is zero")
    return 1.0 - q_f / q_c


def netload_report(
    data_lengths: Mapping[str, int],
    log: TrainingLog,
    model_length_bytes: int,
    topology: Topology,
    accounting: str = "single",
    use_logged_hops: bool = False,
) -> NetLoadReport:
    """Build the report; ``use_logged_hops`` reads per-round hops from the log."""
    q_c = centralized_load(data_lengths, topology)
    q_f = federated_load(log, model_length_bytes, None if use_logged_hops else topology, accounting)
    return NetLoadReport(q_c, q_f, reward(q_f, q_c), model_length_bytes, accounting, dict(data_lengths))
