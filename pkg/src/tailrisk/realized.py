"""Daily realized measures from intraday log-returns.

Nine measures per day: jump-robust continuous proxy (CV), realized
variance (RV), flat-top Parzen realized kernel (RK), signed semivariances
(RS+/RS-), tail/middle/tail decomposition of squared returns by intraday
quantile (REX-/REXm/REX+), and standardized realized kurtosis (RKurt).

Two exact identities hold by construction and are asserted when panels are
built: RS+ + RS- = RV and REX- + REXm + REX+ = RV.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ingest import IntradayDay

log = logging.getLogger(__name__)

MEASURE_COLUMNS = ("CV", "RV", "RK", "RS_pos", "RS_neg",
                   "REX_neg", "REX_mid", "REX_pos", "RKurt")

_MU1_SQ_INV = math.pi / 2.0  # 1/mu_1^2 with mu_1 = sqrt(2/pi)


def realized_variance(day: IntradayDay) -> float:
    """Sum of squared intraday log-returns."""
    if day.n < 1:
        raise DataError(f"{day.date}: empty day")
    r = day.returns
    return float(np.dot(r, r))


def bipower_variation(day: IntradayDay) -> float:
    """Jump-robust product-of-adjacent-absolute-returns estimator."""
    if day.n < 2:
        raise DataError(f"{day.date}: bipower variation needs n >= 2, got {day.n}")
    a = np.abs(day.returns)
    return float(_MU1_SQ_INV * (day.n / (day.n - 1.0)) * np.dot(a[:-1], a[1:]))


def _parzen(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    lo = x <= 0.5
    w[lo] = 1.0 - 6.0 * x[lo] ** 2 + 6.0 * x[lo] ** 3
    hi = (x > 0.5) & (x <= 1.0)
    w[hi] = 2.0 * (1.0 - x[hi]) ** 3
    return w


def realized_kernel(day: IntradayDay, bandwidth: int | None = None) -> float:
    """Flat-top Parzen kernel estimator, robust to serial correlation.

    ``bandwidth`` is the number of autocovariance lags H; None selects
    ceil(n^0.6). H = 0 degenerates to realized variance.
    """
    if day.n < 2:
        raise DataError(f"{day.date}: realized kernel needs n >= 2, got {day.n}")
    r = day.returns
    n = day.n
    if bandwidth is None:
        bandwidth = math.ceil(n ** 0.6)
    if bandwidth >= n:
        raise DataError(f"{day.date}: bandwidth {bandwidth} must be < n = {n}")
    gamma0 = float(np.dot(r, r))
    if bandwidth == 0:
        return gamma0
    h = np.arange(1, bandwidth + 1)
    weights = _parzen((h - 1.0) / bandwidth)
    acc = gamma0
    for lag, w in zip(h, weights):
        acc += 2.0 * w * float(np.dot(r[lag:], r[:-lag]))
    return acc


def semivariances(day: IntradayDay) -> tuple[float, float]:
    """(RS+, RS-): squared returns split by sign; zeros count toward neither."""
    if day.n < 1:
        raise DataError(f"{day.date}: empty day")
    r = day.returns
    sq = r * r
    return float(sq[r > 0].sum()), float(sq[r < 0].sum())


def rex_decomposition(day: IntradayDay, tail_frac: float = 0.05,
                      min_n: int = 20) -> tuple[float, float, float]:
    """(REX-, REXm, REX+): squared-return mass below/within/above the
    intraday tail quantiles of the standardized returns.

    Days with fewer than ``min_n`` returns or zero spread put all mass in
    the middle bucket; the three parts always sum to RV exactly.
    """
    if not 0.0 < tail_frac < 0.5:
        raise DataError(f"tail_frac must be in (0, 0.5), got {tail_frac}")
    r = day.returns
    sq = r * r
    rv = float(sq.sum())
    sd = float(r.std())
    # spread at float-noise level counts as degenerate (all returns equal)
    if day.n < min_n or sd <= 1e-12 * max(float(np.abs(r).max()), 1e-300):
        return 0.0, rv, 0.0
    z = r / sd
    q_lo = np.quantile(z, tail_frac)
    q_hi = np.quantile(z, 1.0 - tail_frac)
    lo = z <= q_lo
    hi = (z >= q_hi) & ~lo
    rex_neg = float(sq[lo].sum())
    rex_pos = float(sq[hi].sum())
    return rex_neg, rv - rex_neg - rex_pos, rex_pos


def realized_kurtosis(day: IntradayDay, raw_fourth_moment: bool = False) -> float:
    """n * sum(r^4) / (sum(r^2))^2, or plain sum(r^4) when raw_fourth_moment."""
    if day.n < 2:
        raise DataError(f"{day.date}: realized kurtosis needs n >= 2")
    r = day.returns
    quart = float(np.sum(r ** 4))
    if raw_fourth_moment:
        return quart
    rv = float(np.dot(r, r))
    if rv == 0.0:
        raise DataError(f"{day.date}: realized kurtosis undefined when RV = 0")
    return day.n * quart / (rv * rv)


def continuous_and_jump(rv: float, rbv: float) -> tuple[float, float]:
    """Continuous proxy and non-negative jump component: (RBV, max(RV-RBV, 0))."""
    if rv < 0.0 or rbv < 0.0:
        raise DataError("rv and rbv must be non-negative")
    return rbv, max(rv - rbv, 0.0)


@dataclass(frozen=True)
class MeasureRow:
    date: object
    cv: float
    rv: float
    rk: float
    rs_pos: float
    rs_neg: float
    rex_neg: float
    rex_mid: float
    rex_pos: float
    rkurt: float

    def values(self) -> tuple:
        return (self.cv, self.rv, self.rk, self.rs_pos, self.rs_neg,
                self.rex_neg, self.rex_mid, self.rex_pos, self.rkurt)

    def check_identities(self, rel_tol: float = 1e-12):
        scale = max(self.rv, 1e-300)
        if abs(self.rs_pos + self.rs_neg - self.rv) > rel_tol * scale:
            raise DataError(f"{self.date}: semivariance identity violated")
        if abs(self.rex_neg + self.rex_mid + self.rex_pos - self.rv) > rel_tol * scale:
            raise DataError(f"{self.date}: tail decomposition identity violated")
        if self.rv < 0 or self.cv < 0 or self.rk < 0:
            raise DataError(f"{self.date}: negative variance measure")
        if not all(math.isfinite(v) for v in self.values()):
            raise DataError(f"{self.date}: non-finite measure")


@dataclass
class MeasureConfig:
    tail_frac: float = 0.05
    rex_min_n: int = 20
    kernel_bandwidth: int | None = None   # None = ceil(n^0.6)
    rkurt_raw_fourth_moment: bool = False


@dataclass
class MeasurePanel:
    """Date-indexed table of the nine measures, fixed column order."""

    dates: np.ndarray
    table: np.ndarray            # (T, 9) in MEASURE_COLUMNS order
    columns: tuple = MEASURE_COLUMNS
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.table[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"unknown measure column {name!r}; have {self.columns}")

    def row(self, i: int) -> MeasureRow:
        return MeasureRow(self.dates[i], *self.table[i])

    def restrict(self, mask) -> "MeasurePanel":
        return MeasurePanel(self.dates[mask], self.table[mask], self.columns, self.skipped)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("date",) + tuple(self.columns))
            for i in range(len(self)):
                wr.writerow([str(self.dates[i])] + [repr(float(v)) for v in self.table[i]])

    @classmethod
    def read_csv(cls, path) -> "MeasurePanel":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header[1:]) != MEASURE_COLUMNS:
                raise DataError(f"{path}: unexpected panel columns {header[1:]}")
            dates, rows = [], []
            for rec in rd:
                dates.append(np.datetime64(rec[0]))
                rows.append([float(v) for v in rec[1:]])
        return cls(np.array(dates), np.array(rows, dtype=float))


def compute_row(day: IntradayDay, config: MeasureConfig | None = None) -> MeasureRow:
    config = config or MeasureConfig()
    rv = realized_variance(day)
    rbv = bipower_variation(day)
    cv, _jump = continuous_and_jump(rv, rbv)
    rk = realized_kernel(day, config.kernel_bandwidth)
    rs_pos, rs_neg = semivariances(day)
    rex_neg, rex_mid, rex_pos = rex_decomposition(day, config.tail_frac, config.rex_min_n)
    rkurt = realized_kurtosis(day, config.rkurt_raw_fourth_moment)
    row = MeasureRow(day.date, cv, rv, rk, rs_pos, rs_neg,
                     rex_neg, rex_mid, rex_pos, rkurt)
    row.check_identities()
    return row


def build_panel(days, config: MeasureConfig | None = None) -> MeasurePanel:
    """One row per valid day; failing days are skipped with the reason logged."""
    days = list(days)
    if not days:
        raise DataError("no intraday days supplied")
    rows, dates, skipped = [], [], []
    for day in days:
        try:
            row = compute_row(day, config)
        except DataError as exc:
            skipped.append((day.date, str(exc)))
            log.warning("skipping %s: %s", day.date, exc)
            continue
        rows.append(row.values())
        dates.append(day.date)
    if not rows:
        raise DataError(f"all {len(days)} days failed measure computation")
    if skipped:
        log.info("built panel with %d rows, skipped %d days", len(rows), len(skipped))
    return MeasurePanel(dates=np.array(dates), table=np.array(rows, dtype=float),
                        skipped=skipped)
