"""Trip records to an hour x day x week x zone count tensor, and top-K% event detection.

Calendar bucketing (all 0-based in the tensor):

* hour   -- local hour of the dropoff timestamp, 0..23;
* day    -- weekday with Monday = 0;
* week   -- ``day_of_year // 7`` clamped to 52, so Jan 1-6 is week 0, each
  following week starts on day-of-year ``7w``, and Dec 30-31 land in week 52;
* zone   -- position of the zone id in the configured whitelist.

Because a (week, day) pair identifies at most one date of the year, every
cell maps back to a calendar date through :func:`cell_date`.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from ._io import atomic_writer

__all__ = [
    "HOURS",
    "DAYS",
    "WEEKS",
    "DEFAULT_THRESHOLDS",
    "IngestError",
    "TripRecord",
    "IngestConfig",
    "IngestStats",
    "parse_trips",
    "calendar_cell",
    "cell_date",
    "aggregate",
    "zone_volumes",
    "top_zones",
    "Event",
    "read_events",
    "Ranking",
    "anomaly_scores",
    "top_k_count",
    "top_k_percent",
    "EventMatch",
    "match_events",
    "DetectionReport",
    "detect",
]

HOURS, DAYS, WEEKS = 24, 7, 53
DEFAULT_THRESHOLDS = (0.014, 0.07, 0.14, 0.3, 0.7, 1.0, 2.0, 3.0)
TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class TripRecord:
    dropoff_time: dt.datetime
    zone: int


@dataclass(frozen=True)
class IngestConfig:
    year: int
    zones: tuple[int, ...]
    time_column: str = "tpep_dropoff_datetime"
    zone_column: str = "DOLocationID"

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(int(z) for z in self.zones))
        if not self.zones:
            raise IngestError("zones: whitelist is empty")
        if len(set(self.zones)) != len(self.zones):
            raise IngestError("zones: whitelist has duplicates")
        if any(z < 1 for z in self.zones):
            raise IngestError("zones: ids must be positive")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return HOURS, DAYS, WEEKS, len(self.zones)

    @classmethod
    def from_dict(cls, doc: dict) -> "IngestConfig":
        allowed = {"year", "zones", "time_column", "zone_column"}
        extra = set(doc) - allowed
        if extra:
            raise IngestError(f"{sorted(extra)[0]}: unknown configuration key")
        for key in ("year", "zones"):
            if key not in doc:
                raise IngestError(f"{key}: missing required key")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "year": self.year,
            "zones": list(self.zones),
            "time_column": self.time_column,
            "zone_column": self.zone_column,
        }


@dataclass
class IngestStats:
    accepted: int = 0
    skipped: int = 0
    out_of_year: int = 0
    dropped_zone: int = 0

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "skipped": self.skipped,
            "out_of_year": self.out_of_year,
            "dropped_zone": self.dropped_zone,
        }


def parse_trips(
    stream: TextIO,
    year: int,
    time_column: str = "tpep_dropoff_datetime",
    zone_column: str = "DOLocationID",
    stats: IngestStats | None = None,
) -> Iterator[TripRecord]:
    """Stream :class:`TripRecord` objects from a CSV with a header row.

    The header is checked immediately; rows are parsed lazily. Malformed rows
    increment ``stats.skipped`` and rows from other years ``stats.out_of_year``.
    """
    stats = stats if stats is not None else IngestStats()
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("trip file is empty (no header row)") from None
    except (OSError, csv.Error) as exc:
        raise IngestError(f"cannot read trip stream: {exc}") from exc
    header = [h.strip() for h in header]
    missing = [c for c in (time_column, zone_column) if c not in header]
    if missing:
        raise IngestError(f"missing required column(s): {', '.join(missing)}")
    ti, zi = header.index(time_column), header.index(zone_column)

    def rows() -> Iterator[TripRecord]:
        for row in reader:
            if not row:
                continue
            try:
                ts = dt.datetime.strptime(row[ti].strip(), TIMESTAMP_FORMAT)
                zone = int(row[zi])
            except (IndexError, ValueError):
                stats.skipped += 1
                continue
            if zone < 1:
                stats.skipped += 1
                continue
            if ts.year != year:
                stats.out_of_year += 1
                continue
            stats.accepted += 1
            yield TripRecord(ts, zone)

    return rows()


def calendar_cell(ts: dt.datetime) -> tuple[int, int, int]:
    """``(hour, day, week)`` bucket of a timestamp."""
    week = min(ts.timetuple().tm_yday // 7, WEEKS - 1)
    return ts.hour, ts.weekday(), week


def cell_date(day: int, week: int, year: int) -> dt.date | None:
    """The date in ``year`` with the given weekday and week bucket, or None."""
    jan1 = dt.date(year, 1, 1)
    for yday in range(max(7 * week, 1), 7 * week + 7):
        date = jan1 + dt.timedelta(days=yday - 1)
        if date.year != year:
            break
        if date.weekday() == day:
            return date
    return None


def aggregate(records: Iterable[TripRecord], config: IngestConfig, stats: IngestStats | None = None,
              chunk: int = 1 << 16) -> np.ndarray:
    """Count records per (hour, day, week, zone) cell; non-whitelisted zones are dropped."""
    shape = config.shape
    pos = {z: i for i, z in enumerate(config.zones)}
    counts = np.zeros(int(np.prod(shape)), dtype=np.int64)
    buf: list[int] = []

    def flush():
        if buf:
            counts[:] += np.bincount(np.asarray(buf, dtype=np.int64), minlength=counts.size)
            buf.clear()

    for rec in records:
        z = pos.get(rec.zone)
        if z is None:
            if stats is not None:
                stats.dropped_zone += 1
            continue
        h, d, w = calendar_cell(rec.dropoff_time)
        buf.append(((h * DAYS + d) * WEEKS + w) * len(pos) + z)
        if len(buf) >= chunk:
            flush()
    flush()
    return counts.reshape(shape).astype(np.float64)


def zone_volumes(records: Iterable[TripRecord]) -> Counter:
    return Counter(r.zone for r in records)


def top_zones(volumes: Counter, n: int) -> tuple[int, ...]:
    """The ``n`` busiest zones, ties broken by smaller zone id, returned in id order."""
    ranked = sorted(volumes.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return tuple(sorted(z for z, _ in ranked))


@dataclass(frozen=True)
class Event:
    date: dt.date
    zones: frozenset[int]
    label: str = ""


def read_events(stream: TextIO, year: int | None = None) -> list[Event]:
    """Read an event CSV with columns ``date``, ``zones`` (``;``-separated), ``label``."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return []
    missing = {"date", "zones"} - {f.strip() for f in reader.fieldnames}
    if missing:
        raise IngestError(f"event file missing column(s): {', '.join(sorted(missing))}")
    events = []
    for lineno, row in enumerate(reader, start=2):
        row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
        try:
            date = dt.date.fromisoformat(row["date"])
            zones = frozenset(int(z) for z in row["zones"].split(";") if z.strip())
        except ValueError as exc:
            raise IngestError(f"event file line {lineno}: {exc}") from None
        if not zones:
            raise IngestError(f"event file line {lineno}: no zones")
        if year is not None and date.year != year:
            raise IngestError(f"event file line {lineno}: date {date} outside {year}")
        events.append(Event(date, zones, row.get("label", "")))
    return events


@dataclass(frozen=True)
class Ranking:
    """Tensor entries sorted by descending score, ties in row-major index order."""

    order: np.ndarray
    scores: np.ndarray
    shape: tuple[int, ...]

    def __len__(self) -> int:
        return self.order.size

    def index(self, position: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(self.order[position], self.shape))


def anomaly_scores(sparse: np.ndarray, pool_hours: bool = False) -> Ranking:
    """Rank entries by ``|sparse|``.

    With ``pool_hours`` the hour mode (axis 0) is max-pooled first, so the
    ranking runs over (day, week, zone) cells.
    """
    a = np.abs(np.asarray(sparse, dtype=np.float64))
    if pool_hours:
        a = a.max(axis=0)
    flat = a.ravel()
    order = np.argsort(-flat, kind="stable")
    return Ranking(order.astype(np.int64), flat[order], a.shape)


def top_k_count(n: int, k_percent: float) -> int:
    """``ceil(k_percent / 100 * n)`` in exact rational arithmetic."""
    if not 0 < k_percent <= 100:
        raise ValueError(f"K must lie in (0, 100], got {k_percent}")
    return math.ceil(Fraction(str(k_percent)) * n / 100)


def top_k_percent(ranking: Ranking, k_percent: float) -> np.ndarray:
    """Flat indices of the top ``k_percent`` % of the ranking, best first."""
    return ranking.order[: top_k_count(len(ranking), k_percent)]


@dataclass(frozen=True)
class EventMatch:
    detected: int
    first_hit: tuple[int | None, ...]


def _date_table(year: int) -> np.ndarray:
    """Proleptic ordinal of every (day, week) cell, -1 outside the year."""
    table = np.full((DAYS, WEEKS), -1, dtype=np.int64)
    for d in range(DAYS):
        for w in range(WEEKS):
            date = cell_date(d, w, year)
            if date is not None:
                table[d, w] = date.toordinal()
    return table


def match_events(selected: np.ndarray, shape: Sequence[int], events: Sequence[Event],
                 config: IngestConfig) -> EventMatch:
    """Count events hit by at least one selected cell on the event's date and zones.

    ``selected`` holds flat indices into a tensor of ``shape``, either the full
    (hour, day, week, zone) layout or the hour-pooled (day, week, zone) one.
    ``first_hit[e]`` is the position in ``selected`` of the first match.
    """
    if not events:
        return EventMatch(0, ())
    sel = np.asarray(selected, dtype=np.int64)
    if sel.size == 0:
        return EventMatch(0, (None,) * len(events))
    idx = np.unravel_index(sel, tuple(shape))
    day, week, zpos = idx[-3], idx[-2], idx[-1]
    ordinals = _date_table(config.year)[day, week]
    zone_ids = np.asarray(config.zones, dtype=np.int64)[zpos]
    hits: list[int | None] = []
    for ev in events:
        mask = (ordinals == ev.date.toordinal()) & np.isin(zone_ids, sorted(ev.zones))
        hits.append(int(np.argmax(mask)) if mask.any() else None)
    return EventMatch(sum(h is not None for h in hits), tuple(hits))


@dataclass(frozen=True)
class DetectionReport:
    ranking: Ranking
    thresholds: tuple[float, ...]
    selected: dict = field(default_factory=dict)
    matches: dict = field(default_factory=dict)

    @property
    def counts(self) -> dict:
        return {k: m.detected for k, m in self.matches.items()}

    def write_thresholds_csv(self, path) -> None:
        with atomic_writer(path, newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k_percent", "selected", "detected"])
            for k in self.thresholds:
                w.writerow([k, self.selected[k], self.matches[k].detected])

    def write_ranked_csv(self, path, config: IngestConfig, limit: int | None = None) -> None:
        """Top entries with their calendar date and zone id."""
        n = max(self.selected.values()) if limit is None else limit
        pooled = len(self.ranking.shape) == 3
        with atomic_writer(path, newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "hour", "day", "week", "zone_index", "zone_id", "date", "score"])
            for p in range(min(n, len(self.ranking))):
                idx = self.ranking.index(p)
                hour = "" if pooled else idx[0]
                d, wk, z = idx[-3:]
                date = cell_date(d, wk, config.year)
                w.writerow([p + 1, hour, d, wk, z, config.zones[z],
                            date.isoformat() if date else "", repr(float(self.ranking.scores[p]))])


def detect(sparse: np.ndarray, events: Sequence[Event], config: IngestConfig,
           thresholds: Sequence[float] = DEFAULT_THRESHOLDS, pool_hours: bool = False) -> DetectionReport:
    """Score the sparse component and count detected events at every top-K% level."""
    if np.shape(sparse)[-1] != len(config.zones) or np.ndim(sparse) != 4:
        raise ValueError(f"sparse tensor shape {np.shape(sparse)} does not match {config.shape}")
    ranking = anomaly_scores(sparse, pool_hours)
    thresholds = tuple(float(k) for k in thresholds)
    selected, matches = {}, {}
    for k in thresholds:
        sel = top_k_percent(ranking, k)
        selected[k] = int(sel.size)
        matches[k] = match_events(sel, ranking.shape, events, config)
    return DetectionReport(ranking, thresholds, selected, matches)


def load_ingest_config(path) -> IngestConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"ingest config is not valid JSON ({exc})") from None
    return IngestConfig.from_dict(doc)
