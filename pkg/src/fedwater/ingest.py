"""Monthly consumption CSV ingestion and seeded synthetic fleets."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .exceptions import DataError

GAP_POLICIES = ("linear-interpolate", "drop-series", "fail")

DEFAULT_COLUMNS = {
    "building_id": "building_id",
    "month": "month",
    "consumption": "consumption",
    "cost": "cost",
}

_MONTH_RE = re.compile(r"^\s*(\d{4})-(\d{1,2})(?:-\d{1,2})?\s*$")


@dataclass(frozen=True, order=True)
class Month:
    """A calendar month; the atomic time unit of every series."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month index must be in 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        m = _MONTH_RE.match(text)
        if m is None:
            raise ValueError(f"unparseable month {text!r} (expected YYYY-MM)")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "Month":
        year, month0 = divmod(ordinal, 12)
        return cls(year, month0 + 1)

    @property
    def ordinal(self) -> int:
        return self.year * 12 + self.month - 1

    def __add__(self, months: int) -> "Month":
        return Month.from_ordinal(self.ordinal + int(months))

    def __sub__(self, other: "Month") -> int:
        return self.ordinal - other.ordinal

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


@dataclass(frozen=True)
class RawRecord:
    building_id: str
    month: Month
    consumption: float
    cost: float | None = None


class TimeSeries:
    """One building's gap-free monthly consumption (HCF)."""

    __slots__ = ("building_id", "start_month", "values")

    def __init__(self, building_id: str, start_month: Month, values):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("a TimeSeries needs at least one value")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError(f"series {building_id!r} has negative or non-finite values")
        values.setflags(write=False)
        self.building_id = str(building_id)
        self.start_month = start_month
        self.values = values

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_month(self) -> Month:
        return self.start_month + (len(self) - 1)

    @property
    def months(self) -> list[Month]:
        return [self.start_month + i for i in range(len(self))]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.building_id == other.building_id
            and self.start_month == other.start_month
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return (
            f"TimeSeries({self.building_id!r}, start={self.start_month}, "
            f"n={len(self)})"
        )


def fill_gaps(
    observations: Mapping[Month, float],
    policy: str = "linear-interpolate",
    building_id: str = "",
) -> TimeSeries | None:
    """Turn a sparse month -> value map into a contiguous series.

    Interior missing months are linearly interpolated under
    ``"linear-interpolate"``. Under ``"drop-series"`` a gappy series yields
    ``None`` so the caller can skip it; ``"fail"`` raises :class:`DataError`.
    """
    if policy not in GAP_POLICIES:
        raise ValueError(f"unknown gap policy {policy!r}; choose from {GAP_POLICIES}")
    if not observations:
        raise DataError(f"series {building_id!r} has no observations")

    months = sorted(observations)
    start, end = months[0], months[-1]
    n = end - start + 1
    if n == len(months):
        return TimeSeries(building_id, start, [observations[m] for m in months])

    if policy == "fail":
        raise DataError(
            f"series {building_id!r} is missing {n - len(months)} month(s) "
            f"between {start} and {end}"
        )
    if policy == "drop-series":
        return None

    known_x = np.array([m - start for m in months], dtype=np.float64)
    known_y = np.array([observations[m] for m in months], dtype=np.float64)
    values = np.interp(np.arange(n, dtype=np.float64), known_x, known_y)
    return TimeSeries(building_id, start, values)


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"row {lineno}: non-numeric {what} {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {lineno}: non-finite {what} {text!r}")
    return value


def read_records(source: IO[str], columns: Mapping[str, str] | None = None) -> list[RawRecord]:
    schema = {**DEFAULT_COLUMNS, **(columns or {})}
    reader = csv.DictReader(source)
    if not reader.fieldnames:
        raise DataError("empty CSV: no header row")
    for logical in ("building_id", "month", "consumption"):
        if schema[logical] not in reader.fieldnames:
            raise DataError(
                f"missing required column {schema[logical]!r} for {logical} "
                f"(have {reader.fieldnames})"
            )
    has_cost = schema["cost"] in reader.fieldnames

    records = []
    for row in reader:
        lineno = reader.line_num
        building = (row[schema["building_id"]] or "").strip()
        if not building:
            raise DataError(f"row {lineno}: empty building id")
        try:
            month = Month.parse(row[schema["month"]] or "")
        except ValueError as exc:
            raise DataError(f"row {lineno}: {exc}") from None
        consumption = _parse_float(row[schema["consumption"]], "consumption", lineno)
        if consumption < 0:
            raise DataError(f"row {lineno}: negative consumption {consumption}")
        cost = None
        if has_cost and (row[schema["cost"]] or "").strip():
            cost = _parse_float(row[schema["cost"]], "cost", lineno)
            if cost < 0:
                raise DataError(f"row {lineno}: negative cost {cost}")
        records.append(RawRecord(building, month, consumption, cost))

    if not records:
        raise DataError("empty CSV: no data rows")
    return records


def parse_consumption_csv(
    source: IO[str] | IO[bytes] | str | Path,
    columns: Mapping[str, str] | None = None,
    gap_policy: str = "linear-interpolate",
) -> list[TimeSeries]:
    """Parse a consumption CSV into one gap-free series per building.

    Duplicate (building, month) rows are summed, which turns per-meter rows
    into building totals. Series come back sorted by building id.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_consumption_csv(fh, columns, gap_policy)
    text = source.read()
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise DataError(f"CSV is not valid UTF-8: {exc}") from None

    grouped: dict[str, dict[Month, float]] = {}
    for rec in read_records(io.StringIO(text, newline=""), columns):
        per_month = grouped.setdefault(rec.building_id, {})
        per_month[rec.month] = per_month.get(rec.month, 0.0) + rec.consumption

    out = []
    for building in sorted(grouped):
        series = fill_gaps(grouped[building], gap_policy, building)
        if series is not None:
            out.append(series)
    if not out:
        raise DataError("every series was dropped by the gap policy")
    return out


def write_consumption_csv(series: Iterable[TimeSeries], sink: IO[str]) -> None:
    """Write series in the ingest schema; floats use repr so re-parsing is exact."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["building_id", "month", "consumption"])
    for ts in series:
        for month, value in zip(ts.months, ts.values):
            writer.writerow([ts.building_id, str(month), repr(float(value))])


@dataclass(frozen=True)
class SyntheticFleetConfig:
    n_buildings: int = 20
    n_months: int = 96
    base_range: tuple[float, float] = (50.0, 150.0)
    amplitude_range: tuple[float, float] = (10.0, 40.0)
    phase_range: tuple[float, float] = (0.0, 1.0)
    noise_std: float = 3.0
    trend_range: tuple[float, float] = (-0.1, 0.1)
    rng_seed: int = 7
    start_month: str = "2013-01"

    def __post_init__(self):
        if self.n_buildings < 1 or self.n_months < 1:
            raise ValueError("n_buildings and n_months must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        for name in ("base_range", "amplitude_range", "phase_range", "trend_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        Month.parse(self.start_month)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticFleetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown synthetic config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid synthetic config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticFleetConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def generate_synthetic_fleet(config: SyntheticFleetConfig, id_prefix: str = "BLD") -> list[TimeSeries]:
    """Draw ``n_buildings`` level + trend + annual sinusoid + noise profiles.

    Per building, level, amplitude, phase and slope are drawn (in that order)
    from their uniform ranges, then ``n_months`` gaussian noise terms. Values
    are clamped at zero.
    """
    rng = np.random.default_rng(config.rng_seed)
    start = Month.parse(config.start_month)
    t = np.arange(config.n_months, dtype=np.float64)
    width = max(2, len(str(config.n_buildings - 1)))
    fleet = []
    for b in range(config.n_buildings):
        base = rng.uniform(*config.base_range)
        amplitude = rng.uniform(*config.amplitude_range)
        phase = rng.uniform(*config.phase_range)
        slope = rng.uniform(*config.trend_range)
        noise = rng.normal(0.0, config.noise_std, size=config.n_months)
        values = base + slope * t + amplitude * np.sin(2 * np.pi * (t + phase) / 12) + noise
        fleet.append(TimeSeries(f"{id_prefix}{b:0{width}d}", start, np.maximum(values, 0.0)))
    return fleet
