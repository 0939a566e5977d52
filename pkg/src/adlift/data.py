"""Domain types, CSV ingestion and time arithmetic.

All downstream code works with minute offsets from the start of the visit
series.  Minute ``t`` (1-based) covers the offset interval ``(t - 1, t]`` and is
labelled in CSV by the timestamp of its start, so row ``i`` (0-based) of the
visits file is minute ``t = i + 1``.  An ad ending at offset ``s`` can only
affect minutes ``t > s``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from adlift.errors import DataError, GapError, RangeError

MOTIVES: tuple[str, ...] = ("sponsoring",) + tuple(f"spot{i}" for i in range(1, 12))
POSITIONS: tuple[str, ...] = ("first", "second", "other", "penultimate", "last")
CHANNELS: tuple[str, ...] = tuple(f"channel{i}" for i in range(1, 8))

VISITS_HEADER = ("timestamp", "visits")
ADS_HEADER = ("end_time", "motive", "position", "channel")


def parse_timestamp(text: str, tz: timezone = timezone.utc) -> datetime:
    """Parse an RFC 3339 timestamp; naive values get the fixed offset ``tz``."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=tz)
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.isoformat(timespec="seconds")


def parse_offset(text: str) -> timezone:
    """Parse a fixed UTC offset such as ``+01:00`` or ``Z``."""
    text = text.strip()
    if text in ("Z", "z", "UTC", ""):
        return timezone.utc
    sign = -1 if text.startswith("-") else 1
    hh, _, mm = text.lstrip("+-").partition(":")
    return timezone(sign * timedelta(hours=int(hh), minutes=int(mm or 0)))


@dataclass(frozen=True)
class VisitSeries:
    """Minute-level visit counts starting at ``start_epoch``."""

    start_epoch: datetime
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 1:
            raise DataError("visit series must contain at least one minute")
        if (counts < 0).any():
            row = int(np.flatnonzero(counts < 0)[0]) + 1
            raise DataError("negative visit count", row=row)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.size)

    def timestamp(self, offset_minutes: float) -> datetime:
        return self.start_epoch + timedelta(minutes=float(offset_minutes))


@dataclass(frozen=True)
class AdRecord:
    end_time: float
    motive: str
    position: str
    channel: str

    def __post_init__(self):
        for value, levels, name in (
            (self.motive, MOTIVES, "motive"),
            (self.position, POSITIONS, "position"),
            (self.channel, CHANNELS, "channel"),
        ):
            if value not in levels:
                raise ValueError(f"unknown {name} level {value!r}")


@dataclass(frozen=True)
class AdSchedule:
    ads: tuple[AdRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ads = tuple(sorted(self.ads, key=lambda a: a.end_time))
        object.__setattr__(self, "ads", ads)

    @property
    def m(self) -> int:
        return len(self.ads)

    @property
    def end_times(self) -> np.ndarray:
        return np.array([a.end_time for a in self.ads], dtype=float)

    def __len__(self) -> int:
        return len(self.ads)

    def __iter__(self):
        return iter(self.ads)

    def __getitem__(self, i):
        return self.ads[i]

    def tied_end_times(self) -> int:
        """Number of ads sharing an end time with the preceding ad."""
        s = self.end_times
        return int(np.sum(np.diff(s) == 0)) if s.size > 1 else 0


def _check_header(reader, expected: Sequence[str], path) -> None:
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != tuple(expected):
        raise DataError(f"{path}: expected header {','.join(expected)}, got {header}")


def load_visits(path: str | Path, tz: timezone = timezone.utc) -> VisitSeries:
    """Read a ``timestamp,visits`` CSV with contiguous minute timestamps."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, VISITS_HEADER, path)
        start = None
        counts: list[int] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataError("expected 2 columns", row=row_no)
            try:
                ts = parse_timestamp(row[0], tz)
                count = int(row[1])
            except ValueError as exc:
                raise DataError(str(exc), row=row_no) from None
            if count < 0:
                raise DataError(f"negative visit count {count}", row=row_no)
            if start is None:
                start = ts
            else:
                expected = start + timedelta(minutes=len(counts))
                if ts != expected:
                    if ts > expected:
                        raise GapError(expected, row=row_no)
                    raise DataError("timestamps must be ascending minutes", row=row_no)
            counts.append(count)
    if start is None:
        raise DataError(f"{path}: no rows")
    return VisitSeries(start, np.array(counts, dtype=np.int64))


def write_visits(series: VisitSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VISITS_HEADER)
        for i, c in enumerate(series.counts):
            w.writerow((format_timestamp(series.start_epoch + timedelta(minutes=i)), int(c)))


def load_ads(path: str | Path, series: VisitSeries, tz: timezone = timezone.utc) -> AdSchedule:
    """Read an ``end_time,motive,position,channel`` CSV into minute offsets."""
    ads = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(reader, ADS_HEADER, path)
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise DataError("expected 4 columns", row=row_no)
            try:
                ts = parse_timestamp(row[0], tz)
            except ValueError as exc:
                raise DataError(str(exc), row=row_no) from None
            offset = (ts - series.start_epoch).total_seconds() / 60.0
            if not 0.0 <= offset <= series.n:
                raise RangeError(f"ad at {row[0]} outside the visit series", row=row_no)
            try:
                ads.append(AdRecord(offset, row[1].strip(), row[2].strip(), row[3].strip()))
            except ValueError as exc:
                raise DataError(str(exc), row=row_no) from None
    return AdSchedule(tuple(ads))


def write_ads(ads: AdSchedule, series: VisitSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADS_HEADER)
        for ad in ads:
            ts = series.start_epoch + timedelta(seconds=round(ad.end_time * 60.0))
            w.writerow((format_timestamp(ts), ad.motive, ad.position, ad.channel))


def exclusion_mask(series: VisitSeries | int, ads: AdSchedule | Iterable[float], window: float) -> np.ndarray:
    """Boolean mask over minutes ``1..n``; True where some ad ended at most
    ``window`` minutes earlier (``s < t <= s + window``)."""
    n = series if isinstance(series, int) else series.n
    if window < 0:
        raise ValueError("window must be non-negative")
    s = ads.end_times if isinstance(ads, AdSchedule) else np.asarray(list(ads), dtype=float)
    if window == 0 or s.size == 0:
        return np.zeros(n, dtype=bool)
    # diff-array of interval starts/ends avoids an n*m comparison
    first = np.clip(np.floor(s).astype(np.int64) + 1, 1, n + 1)
    last = np.clip(np.floor(s + window).astype(np.int64), 0, n)
    delta = np.zeros(n + 2, dtype=np.int64)
    ok = last >= first
    np.add.at(delta, first[ok], 1)
    np.add.at(delta, last[ok] + 1, -1)
    return np.cumsum(delta)[1 : n + 1] > 0
