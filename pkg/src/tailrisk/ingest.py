"""Loading, validation and alignment of price data.

Intraday CSVs (`timestamp,price`) become per-day log-return records with
no overnight return; daily closes become a percent return series. The two
are aligned on a common date index with an in-sample/out-of-sample split.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

MIN_INSAMPLE = 250


@dataclass(frozen=True)
class IntradayDay:
    """One trading day's ordered intraday log-returns (raw log units)."""

    date: object                 # numpy datetime64[D]
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=float))
        if not np.all(np.isfinite(self.returns)):
            raise DataError(f"{self.date}: non-finite intraday return")

    @property
    def n(self) -> int:
        return len(self.returns)


@dataclass
class ReturnSeries:
    """Daily returns in percent (100 * diff of log close)."""

    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.dates) != len(self.values):
            raise DataError("dates and returns length mismatch")
        if len(self.dates) > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataError("non-finite daily return")

    def __len__(self):
        return len(self.values)

    def restrict(self, mask) -> "ReturnSeries":
        return ReturnSeries(self.dates[mask], self.values[mask])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date", "return_pct"])
            for d, v in zip(self.dates, self.values):
                wr.writerow([str(d), repr(float(v))])


def _parse_timestamp(raw: str, line_no: int) -> np.datetime64:
    raw = raw.strip()
    try:
        if raw.isdigit() or (raw.startswith("-") and raw[1:].isdigit()):
            return np.datetime64(int(raw), "s")
        return np.datetime64(raw.replace("Z", ""))
    except Exception:
        raise DataError(f"line {line_no}: cannot parse timestamp {raw!r}")


def load_intraday_csv(path, utc_offset_hours: float = 0.0) -> list[IntradayDay]:
    """Read `timestamp,price` rows and return per-day log-return records.

    Rows may be unsorted; they are ordered by timestamp. The day boundary is
    UTC midnight shifted by ``utc_offset_hours``. Days with fewer than two
    prices are dropped with a warning. Overnight moves are excluded: returns
    are differences of log prices within a single day only.
    """
    stamps, prices = [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if [c.strip().lower() for c in header[:2]] != ["timestamp", "price"]:
            raise DataError(f"{path}: expected header 'timestamp,price', got {header}")
        for line_no, rec in enumerate(rd, start=2):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if len(rec) < 2:
                raise DataError(f"{path} line {line_no}: expected 2 columns, got {len(rec)}")
            ts = _parse_timestamp(rec[0], line_no)
            try:
                px = float(rec[1])
            except ValueError:
                raise DataError(f"{path} line {line_no}: cannot parse price {rec[1]!r}")
            if not math.isfinite(px) or px <= 0.0:
                raise DataError(f"{path} line {line_no}: price must be positive, got {rec[1]}")
            stamps.append(ts)
            prices.append(px)
    if not stamps:
        raise DataError(f"{path}: no data rows")

    stamps = np.array(stamps, dtype="datetime64[s]")
    prices = np.array(prices, dtype=float)
    order = np.argsort(stamps, kind="stable")
    stamps, prices = stamps[order], prices[order]

    shift = np.timedelta64(int(round(utc_offset_hours * 3600)), "s")
    daykeys = (stamps + shift).astype("datetime64[D]")

    days: list[IntradayDay] = []
    dropped = 0
    for date in np.unique(daykeys):
        sel = daykeys == date
        ts_d, px_d = stamps[sel], prices[sel]
        if np.any(ts_d[1:] <= ts_d[:-1]):
            dup = int(np.argmax(ts_d[1:] <= ts_d[:-1]))
            raise DataError(f"{path}: duplicate/non-increasing timestamp on {date} "
                            f"at {ts_d[dup + 1]}")
        if len(px_d) < 2:
            dropped += 1
            warnings.warn(f"{path}: day {date} has {len(px_d)} price(s), dropped")
            continue
        days.append(IntradayDay(date=date, returns=np.diff(np.log(px_d))))
    if dropped:
        log.info("%s: dropped %d day(s) with fewer than 2 prices", path, dropped)
    if not days:
        raise DataError(f"{path}: no day with at least 2 prices")
    return days


def daily_returns_from_closes(closes) -> ReturnSeries:
    """Percent log-returns from a date -> close mapping (first date dropped)."""
    if isinstance(closes, dict):
        items = sorted(closes.items())
    else:
        items = sorted((d, p) for d, p in closes)
    if len(items) < 2:
        raise DataError(f"need at least 2 closes, got {len(items)}")
    dates = np.array([np.datetime64(d) for d, _ in items])
    px = np.array([float(p) for _, p in items])
    if np.any(px <= 0.0) or not np.all(np.isfinite(px)):
        raise DataError("closes must be positive and finite")
    return ReturnSeries(dates=dates[1:], values=100.0 * np.diff(np.log(px)))


def load_daily_csv(path) -> ReturnSeries:
    """Read `date,close` or `date,return_pct` into a ReturnSeries."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        cols = [c.strip().lower() for c in header]
        rows = [rec for rec in rd if rec and rec[0].strip()]
    if not rows:
        raise DataError(f"{path}: no data rows")
    if cols == ["date", "close"]:
        return daily_returns_from_closes([(r[0], r[1]) for r in rows])
    if cols == ["date", "return_pct"]:
        dates = np.array([np.datetime64(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
        return ReturnSeries(dates=dates, values=vals)
    raise DataError(f"{path}: expected 'date,close' or 'date,return_pct', got {header}")


@dataclass
class AlignedDataset:
    """Returns, measures and (optionally) factors on one date index."""

    returns: ReturnSeries
    measures: object             # MeasurePanel
    split: int                   # first out-of-sample position
    factors: object = None       # FactorSeries, attached after extraction

    def __post_init__(self):
        if len(self.returns) != len(self.measures):
            raise DataError("returns and measures must share one date index")
        if not np.array_equal(self.returns.dates, self.measures.dates):
            raise DataError("returns and measures date indices differ")
        if not 0 < self.split <= len(self.returns):
            raise DataError(f"split {self.split} outside [1, {len(self.returns)}]")

    @property
    def n_oos(self) -> int:
        return len(self.returns) - self.split

    def with_factors(self, factors) -> "AlignedDataset":
        if not np.array_equal(np.asarray(factors.dates), self.returns.dates):
            raise DataError("factor date index differs from dataset index")
        return AlignedDataset(self.returns, self.measures, self.split, factors)


def align(returns: ReturnSeries, measures, split_date=None,
          oos_length: int = None) -> AlignedDataset:
    """Restrict both series to their common dates and fix the sample split.

    Exactly one of ``split_date`` (first out-of-sample day) or ``oos_length``
    must be given. Dropped dates are counted and logged.
    """
    if (split_date is None) == (oos_length is None):
        raise DataError("give exactly one of split_date or oos_length")
    common = np.intersect1d(returns.dates, measures.dates)
    if common.size == 0:
        raise DataError("returns and measures have no dates in common")
    n_dropped = (len(returns) - common.size) + (len(measures) - common.size)
    if n_dropped:
        log.info("alignment dropped %d date(s) not present in both series", n_dropped)
    r = returns.restrict(np.isin(returns.dates, common))
    m = measures.restrict(np.isin(measures.dates, common))

    if split_date is not None:
        split = int(np.searchsorted(common, np.datetime64(split_date)))
    else:
        split = common.size - int(oos_length)
    if split < MIN_INSAMPLE:
        raise DataError(f"split leaves {split} in-sample days; need >= {MIN_INSAMPLE}")
    if split > common.size:
        raise DataError("split date beyond the common date range")
    log.info("aligned %d dates, %d in-sample / %d out-of-sample",
             common.size, split, common.size - split)
    return AlignedDataset(returns=r, measures=m, split=split)
