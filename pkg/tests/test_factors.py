import numpy as np
import pytest

from tailrisk.errors import DataError
from tailrisk.factors import (FactorSeries, ar1_smooth, extract_pc_factor,
                              standardize_panel)
from tailrisk.realized import MEASURE_COLUMNS, MeasurePanel


def make_panel(table, dates=None):
    T = table.shape[0]
    if dates is None:
        dates = np.datetime64("2020-01-01") + np.arange(T)
    return MeasurePanel(dates=np.asarray(dates), table=np.asarray(table, float))


def lognormal_panel(rng, T=400, scale=1e-4):
    base = np.exp(rng.normal(np.log(scale), 0.5, (T, 9)))
    base[:, 8] = rng.normal(3.0, 0.3, T)  # kurtosis column, identity transform
    return make_panel(base)


class TestStandardize:
    def test_insample_moments(self, rng):
        panel = lognormal_panel(rng)
        table, stats = standardize_panel(panel, insample_rows=300)
        assert table.shape == (400, 9)
        np.testing.assert_allclose(table[:300].mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(table[:300].std(axis=0), 1.0, atol=1e-10)
        assert stats.transforms[MEASURE_COLUMNS.index("RKurt")] == "identity"
        assert stats.transforms[0] == "log"

    def test_constant_column_dropped(self, rng):
        panel = lognormal_panel(rng)
        panel.table[:, 2] = 7e-5
        with pytest.warns(UserWarning, match="zero in-sample variance"):
            table, stats = standardize_panel(panel, insample_rows=300)
        assert table.shape[1] == 8 and "RK" in stats.dropped

    def test_oos_rows_use_insample_stats(self, rng):
        panel = lognormal_panel(rng)
        panel.table[300:, :8] *= 10.0  # regime shift after the split
        table, stats = standardize_panel(panel, insample_rows=300)
        assert abs(table[300:, 0].mean()) > 1.0  # shift visible, not re-centered

    def test_no_lookahead(self, rng):
        panel = lognormal_panel(rng)
        t_full, s_full = standardize_panel(panel, insample_rows=300)
        trunc = make_panel(panel.table[:320], panel.dates[:320])
        t_trunc, s_trunc = standardize_panel(trunc, insample_rows=300)
        np.testing.assert_array_equal(s_full.means, s_trunc.means)
        np.testing.assert_array_equal(s_full.stds, s_trunc.stds)
        np.testing.assert_array_equal(t_full[:320], t_trunc)

    def test_zero_floored_and_recorded(self, rng):
        panel = lognormal_panel(rng)
        panel.table[5, 1] = 0.0
        table, stats = standardize_panel(panel, insample_rows=300)
        assert "RV" in stats.log_floors and np.isfinite(table[5, 1])

    def test_min_rows(self, rng):
        with pytest.raises(DataError):
            standardize_panel(lognormal_panel(rng), insample_rows=50)


class TestExtractFactor:
    def test_identical_columns_perfect_factor(self, rng):
        x = rng.standard_normal(500)
        table = np.column_stack([x, x])
        stats = type("S", (), {"columns": ["CV", "RV"], "insample_rows": 400})()
        fs = extract_pc_factor(table, stats, np.arange(500), r=1)
        np.testing.assert_allclose(np.abs(fs.loadings[:, 0]),
                                   [1 / np.sqrt(2)] * 2, rtol=1e-10)
        assert fs.explained[0] == pytest.approx(1.0, abs=1e-10)

    def test_independent_noise_half_share(self, rng):
        table = rng.standard_normal((20000, 2))
        stats = type("S", (), {"columns": ["CV", "RV"], "insample_rows": 20000})()
        fs = extract_pc_factor(table, stats, np.arange(20000), r=1)
        assert fs.explained[0] == pytest.approx(0.5, abs=0.02)

    def test_rv_loading_sign_positive(self, rng):
        base = rng.standard_normal(500)
        table = np.column_stack([base + 0.1 * rng.standard_normal(500),
                                 base + 0.1 * rng.standard_normal(500)])
        stats = type("S", (), {"columns": ["CV", "RV"], "insample_rows": 400})()
        fs = extract_pc_factor(table, stats, np.arange(500), r=1)
        assert fs.loadings[1, 0] > 0

    def test_column_sign_flip(self, rng):
        base = rng.standard_normal(600)
        a = base + 0.2 * rng.standard_normal(600)
        b = base + 0.2 * rng.standard_normal(600)
        stats = type("S", (), {"columns": ["CV", "RV"], "insample_rows": 500})()
        f1 = extract_pc_factor(np.column_stack([a, b]), stats, np.arange(600))
        f2 = extract_pc_factor(np.column_stack([-a, b]), stats, np.arange(600))
        assert f2.loadings[0, 0] == pytest.approx(-f1.loadings[0, 0], rel=1e-8)
        np.testing.assert_allclose(f2.values, f1.values, rtol=1e-8)

    def test_scores_reproduce_projection(self, rng):
        table = rng.standard_normal((300, 5))
        stats = type("S", (), {"columns": list("ABCDE"), "insample_rows": 250})()
        fs = extract_pc_factor(table, stats, np.arange(300), r=2)
        np.testing.assert_allclose(fs.values, table @ fs.loadings, atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(fs.loadings, axis=0), 1.0, rtol=1e-12)
        assert fs.explained[0] >= fs.explained[1] and fs.explained.sum() <= 1 + 1e-12

    def test_rank_deficiency_reported(self, rng):
        x = rng.standard_normal(300)
        table = np.column_stack([x, x, x])
        stats = type("S", (), {"columns": ["A", "B", "C"], "insample_rows": 250})()
        with pytest.raises(DataError, match="rank 1"):
            extract_pc_factor(table, stats, np.arange(300), r=2)

    def test_no_lookahead_in_loadings(self, rng):
        table = rng.standard_normal((400, 4))
        stats = type("S", (), {"columns": list("ABCD"), "insample_rows": 300})()
        full = extract_pc_factor(table, stats, np.arange(400))
        trunc = extract_pc_factor(table[:310], stats, np.arange(310))
        np.testing.assert_array_equal(full.loadings, trunc.loadings)

    def test_innovation_source_variant(self, rng):
        # persistent common level: innovation extraction removes the AR part
        base = np.cumsum(rng.standard_normal(600)) * 0.05
        table = np.column_stack([base + rng.standard_normal(600) * 0.3
                                 for _ in range(3)])
        stats = type("S", (), {"columns": ["A", "RV", "C"], "insample_rows": 500})()
        fs_lvl = extract_pc_factor(table, stats, np.arange(600), source="levels")
        fs_inn = extract_pc_factor(table, stats, np.arange(600), source="innovations")
        assert len(fs_inn) == 600 and fs_inn.loadings.shape == (3, 1)
        # innovation scores are far less persistent than level scores
        def rho1(v):
            v = v[:, 0] - v[:, 0].mean()
            return abs(np.dot(v[1:], v[:-1]) / np.dot(v, v))
        assert rho1(fs_inn.values) < rho1(fs_lvl.values)
        with pytest.raises(DataError):
            extract_pc_factor(table, stats, np.arange(600), source="wavelet")


class TestAr1Smooth:
    def make_fs(self, values):
        values = np.asarray(values, float)
        return FactorSeries(dates=np.arange(len(values)), values=values[:, None],
                            loadings=np.ones((1, 1)), explained=np.array([1.0]),
                            columns=["RV"])

    def test_white_noise_rho_near_zero(self, rng):
        fs = self.make_fs(rng.standard_normal(2000))
        smoothed, coefs = ar1_smooth(fs, return_details=True)
        assert abs(coefs[0]) < 0.15

    def test_ar1_rho_recovered(self, rng):
        rho, T = 0.9, 2000
        x = np.empty(T)
        x[0] = rng.standard_normal()
        for t in range(1, T):
            x[t] = rho * x[t - 1] + np.sqrt(1 - rho * rho) * rng.standard_normal()
        smoothed, coefs = ar1_smooth(self.make_fs(x), return_details=True)
        assert coefs[0] == pytest.approx(rho, abs=0.05)

    def test_constant_factor_falls_back(self):
        fs = self.make_fs(np.ones(100))
        with pytest.warns(UserWarning, match="constant"):
            out = ar1_smooth(fs)
        np.testing.assert_array_equal(out.values, fs.values)

    def test_too_short(self):
        with pytest.raises(DataError):
            ar1_smooth(self.make_fs(np.ones(10)))
