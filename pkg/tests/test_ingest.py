import math

import numpy as np
import pytest

from tailrisk.errors import DataError
from tailrisk.ingest import (AlignedDataset, MIN_INSAMPLE, ReturnSeries, align,
                             daily_returns_from_closes, load_daily_csv,
                             load_intraday_csv)
from tailrisk.realized import MeasurePanel


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadIntraday:
    def test_three_prices_one_day(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T00:00:00,100\n"
                  "2024-01-02T01:00:00,101\n"
                  "2024-01-02T02:00:00,99.5\n")
        days = load_intraday_csv(p)
        assert len(days) == 1
        assert days[0].n == 2
        np.testing.assert_allclose(days[0].returns,
                                   [math.log(101 / 100), math.log(99.5 / 101)],
                                   rtol=1e-12)

    def test_single_price_day_dropped_with_warning(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T00:00:00,100\n"
                  "2024-01-02T01:00:00,101\n"
                  "2024-01-03T00:00:00,102\n")
        with pytest.warns(UserWarning, match="dropped"):
            days = load_intraday_csv(p)
        assert [d.n for d in days] == [1]

    def test_ten_days_against_recomputation(self, tmp_path):
        rng = np.random.default_rng(7)
        lines = ["timestamp,price"]
        prices = {}
        base = np.datetime64("2024-03-01T00:00:00")
        for d in range(10):
            px = 100 * np.exp(np.cumsum(rng.normal(0, 1e-3, 78)))
            prices[d] = px
            for i in range(78):
                ts = base + np.timedelta64(d, "D") + np.timedelta64(300 * (i + 1), "s")
                lines.append(f"{ts},{px[i]:.12f}")
        p = write(tmp_path, "px.csv", "\n".join(lines) + "\n")
        days = load_intraday_csv(p)
        assert len(days) == 10 and all(d.n == 77 for d in days)
        # independent recomputation from the raw text we wrote
        for d in range(10):
            expected = [math.log(float(f"{prices[d][i + 1]:.12f}"))
                        - math.log(float(f"{prices[d][i]:.12f}")) for i in range(77)]
            np.testing.assert_allclose(days[d].returns, expected, atol=1e-15)

    def test_epoch_seconds_accepted(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n1704153600,100\n1704157200,101\n")
        days = load_intraday_csv(p)
        assert days[0].n == 1

    def test_malformed_row_reports_line(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T00:00:00,100\nnot-a-time,101\n")
        with pytest.raises(DataError, match="line 3"):
            load_intraday_csv(p)

    def test_nonpositive_price_rejected(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n2024-01-02T00:00:00,-5\n")
        with pytest.raises(DataError, match="positive"):
            load_intraday_csv(p)

    def test_nonfinite_price_rejected(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n2024-01-02T00:00:00,inf\n")
        with pytest.raises(DataError, match="positive"):
            load_intraday_csv(p)

    def test_empty_file(self, tmp_path):
        p = write(tmp_path, "px.csv", "")
        with pytest.raises(DataError, match="empty"):
            load_intraday_csv(p)

    def test_duplicate_timestamp_rejected(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T00:00:00,100\n2024-01-02T00:00:00,101\n")
        with pytest.raises(DataError, match="timestamp"):
            load_intraday_csv(p)

    def test_unsorted_rows_are_sorted(self, tmp_path):
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T02:00:00,99.5\n"
                  "2024-01-02T00:00:00,100\n"
                  "2024-01-02T01:00:00,101\n")
        days = load_intraday_csv(p)
        np.testing.assert_allclose(days[0].returns,
                                   [math.log(1.01), math.log(99.5 / 101)], rtol=1e-12)

    def test_day_boundary_shift(self, tmp_path):
        # 23:30 and 00:30 land in one day under a -1h boundary shift
        p = write(tmp_path, "px.csv", "timestamp,price\n"
                  "2024-01-02T23:30:00,100\n"
                  "2024-01-03T00:30:00,101\n")
        assert len(load_intraday_csv(p, utc_offset_hours=-1.0)) == 1
        # default boundary splits them into two single-price days -> no data
        with pytest.warns(UserWarning):
            with pytest.raises(DataError, match="at least 2 prices"):
                load_intraday_csv(p)


class TestDailyReturns:
    def test_flat_price(self):
        rs = daily_returns_from_closes({"2024-01-02": 100.0, "2024-01-03": 100.0})
        np.testing.assert_allclose(rs.values, [0.0])

    def test_hand_values(self):
        rs = daily_returns_from_closes({"2024-01-02": 100.0, "2024-01-03": 110.0,
                                        "2024-01-04": 55.0})
        # 100*ln(1.1) and 100*ln(0.5), evaluated independently
        np.testing.assert_allclose(rs.values, [9.531017980432486, -69.31471805599453],
                                   rtol=1e-12)

    def test_first_date_dropped(self):
        rs = daily_returns_from_closes({"2024-01-02": 100.0, "2024-01-03": 101.0})
        assert len(rs) == 1 and str(rs.dates[0]) == "2024-01-03"

    def test_nonpositive_close_rejected(self):
        with pytest.raises(DataError):
            daily_returns_from_closes({"2024-01-02": 100.0, "2024-01-03": 0.0})

    def test_roundtrip_recovers_closes(self, rng):
        closes = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, 200)))
        dates = np.datetime64("2023-01-01") + np.arange(200)
        rs = daily_returns_from_closes(list(zip(dates.astype(str), closes)))
        rebuilt = closes[0] * np.exp(np.cumsum(rs.values / 100.0))
        np.testing.assert_allclose(rebuilt, closes[1:], rtol=1e-10)

    def test_load_daily_csv_variants(self, tmp_path):
        p1 = write(tmp_path, "a.csv", "date,close\n2024-01-02,100\n2024-01-03,110\n")
        np.testing.assert_allclose(load_daily_csv(p1).values, [100 * math.log(1.1)])
        p2 = write(tmp_path, "b.csv", "date,return_pct\n2024-01-03,1.5\n")
        np.testing.assert_allclose(load_daily_csv(p2).values, [1.5])
        p3 = write(tmp_path, "c.csv", "foo,bar\n1,2\n")
        with pytest.raises(DataError):
            load_daily_csv(p3)


def panel_for(dates):
    T = len(dates)
    g = np.abs(np.random.default_rng(0).normal(1e-4, 2e-5, (T, 6))) + 1e-6
    rs_pos, rs_neg, rex_neg, rex_pos, rk, rkurt = g.T
    rv = rs_pos + rs_neg
    rex_mid = rv - rex_neg - rex_pos
    table = np.column_stack([rv * 0.9, rv, rk, rs_pos, rs_neg,
                             rex_neg, rex_mid, rex_pos, rkurt * 1e4])
    return MeasurePanel(dates=np.asarray(dates), table=table)


class TestAlign:
    def dates(self, n, start="2022-01-01"):
        return np.datetime64(start) + np.arange(n)

    def test_identical_indices(self):
        d = self.dates(600)
        rs = ReturnSeries(d, np.zeros(600))
        ds = align(rs, panel_for(d), oos_length=100)
        assert len(ds.returns) == 600 and ds.split == 500 and ds.n_oos == 100

    def test_missing_dates_dropped_from_both(self):
        d = self.dates(600)
        rs = ReturnSeries(d, np.zeros(600))
        keep = np.ones(600, bool)
        keep[[10, 20, 30]] = False
        ds = align(rs, panel_for(d).restrict(keep), oos_length=100)
        assert len(ds.returns) == 597
        assert np.array_equal(ds.returns.dates, ds.measures.dates)

    def test_oos_500_split(self):
        d = self.dates(800)
        rs = ReturnSeries(d, np.zeros(800))
        ds = align(rs, panel_for(d), oos_length=500)
        assert ds.split == 300 and ds.n_oos == 500

    def test_split_date(self):
        d = self.dates(600)
        rs = ReturnSeries(d, np.zeros(600))
        ds = align(rs, panel_for(d), split_date=str(d[500]))
        assert ds.split == 500

    def test_empty_intersection(self):
        rs = ReturnSeries(self.dates(300), np.zeros(300))
        with pytest.raises(DataError, match="common"):
            align(rs, panel_for(self.dates(300, "2010-01-01")), oos_length=10)

    def test_min_insample_enforced(self):
        d = self.dates(300)
        rs = ReturnSeries(d, np.zeros(300))
        with pytest.raises(DataError, match=str(MIN_INSAMPLE)):
            align(rs, panel_for(d), oos_length=100)

    def test_split_arguments_exclusive(self):
        d = self.dates(600)
        rs = ReturnSeries(d, np.zeros(600))
        with pytest.raises(DataError):
            align(rs, panel_for(d), split_date=str(d[500]), oos_length=100)
        with pytest.raises(DataError):
            align(rs, panel_for(d))

    def test_component_dates_identical(self):
        d = self.dates(400)
        rs = ReturnSeries(d, np.zeros(400))
        ds = align(rs, panel_for(d), oos_length=100)
        assert np.array_equal(ds.returns.dates, ds.measures.dates)
        with pytest.raises(DataError):
            AlignedDataset(rs, panel_for(self.dates(400, "2011-01-01")), 300)

    def test_nan_returns_rejected(self):
        d = self.dates(10)
        with pytest.raises(DataError):
            ReturnSeries(d, np.full(10, np.nan))
