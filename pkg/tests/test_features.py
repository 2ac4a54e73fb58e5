import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlfolio.errors import EmptyUniverseError, InsufficientHistoryError
from rlfolio.features import (
    BETA_WINDOW,
    FEATURE_WARMUP,
    FeatureScaler,
    compute_features,
    global_features,
    momentum,
    rolling_beta,
    select_top_k,
    selection_series,
    technicals,
)

from conftest import full_universe, make_panel


class TestMomentum:
    def test_doubled(self):
        close = np.ones((121, 1)) * 10
        close[120] = 20.0
        panel = make_panel(close)
        assert momentum(panel, 120)[0] == pytest.approx(1.0)

    def test_unchanged(self):
        panel = make_panel(np.full((121, 1), 10.0))
        assert momentum(panel, 120)[0] == pytest.approx(0.0)

    def test_matches_bruteforce(self, rng):
        close = rng.uniform(10, 100, size=(130, 5))
        panel = make_panel(close)
        m = momentum(panel, 125)
        for j in range(5):
            assert m[j] == pytest.approx(close[125, j] / close[5, j] - 1.0, abs=1e-14)

    def test_insufficient_history(self):
        panel = make_panel(np.ones((50, 1)))
        with pytest.raises(InsufficientHistoryError):
            momentum(panel, 40)


class TestSelectTopK:
    def test_basic_ordering(self):
        mom = np.array([0.3, 0.1, 0.5])
        sel = select_top_k(mom, np.ones(3, bool), 2)
        np.testing.assert_array_equal(sel, [2, 0])

    def test_k_exceeds_tradable(self):
        mom = np.array([0.3, 0.1, 0.5])
        sel = select_top_k(mom, np.ones(3, bool), 10)
        np.testing.assert_array_equal(sel, [2, 0, 1])

    def test_matches_sort_truncate_oracle(self, rng):
        mom = rng.normal(size=50)
        mask = rng.random(50) > 0.2
        sel = select_top_k(mom, mask, 20)
        cand = [(float(-mom[i]), i) for i in np.flatnonzero(mask)]
        expected = [i for _, i in sorted(cand)][:20]
        np.testing.assert_array_equal(sel, expected)

    def test_ties_break_by_ascending_index(self):
        mom = np.array([0.5, 0.5, 0.5, 0.1])
        sel = select_top_k(mom, np.ones(4, bool), 2)
        np.testing.assert_array_equal(sel, [0, 1])

    def test_empty_universe(self):
        with pytest.raises(EmptyUniverseError):
            select_top_k(np.array([0.1]), np.zeros(1, bool), 1)

    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_monotone_transform_invariance(self, k, seed):
        r = np.random.default_rng(seed)
        mom = r.normal(size=12)
        mask = r.random(12) > 0.3
        if not mask.any():
            mask[0] = True
        a = select_top_k(mom, mask, k)
        b = select_top_k(np.exp(3.0 * mom), mask, k)  # positive monotone map
        np.testing.assert_array_equal(a, b)


class TestRollingBeta:
    def test_identical_series_beta_one(self, rng):
        m = rng.normal(0, 0.01, size=200)
        beta, degen = rolling_beta(m, m, 60)
        np.testing.assert_allclose(beta[59:], 1.0, atol=1e-12)
        assert not degen.any()

    def test_negated_series_beta_minus_one(self, rng):
        m = rng.normal(0, 0.01, size=200)
        beta, _ = rolling_beta(-m, m, 60)
        np.testing.assert_allclose(beta[59:], -1.0, atol=1e-12)

    def test_matches_two_pass_oracle(self, rng):
        x = rng.normal(0, 0.02, size=300)
        m = rng.normal(0, 0.015, size=300)
        beta, _ = rolling_beta(x, m, 60)
        for t in range(59, 300, 17):
            xw, mw = x[t - 59: t + 1], m[t - 59: t + 1]
            cov = ((xw - xw.mean()) * (mw - mw.mean())).mean()
            var = ((mw - mw.mean()) ** 2).mean()
            assert beta[t] == pytest.approx(cov / var, rel=1e-12)

    def test_zero_market_variance_flagged(self):
        x = np.random.default_rng(0).normal(size=80)
        m = np.zeros(80)
        beta, degen = rolling_beta(x, m, 60)
        assert (beta[59:] == 0.0).all()
        assert degen[59:].all()


class TestTechnicals:
    def test_rising_price_rsi_100(self):
        close = np.cumsum(np.ones(60))[:, None] + 10
        panel = make_panel(close)
        rsi = technicals(panel)["rsi_14"]
        np.testing.assert_allclose(rsi[14:, 0], 100.0)

    def test_constant_price(self):
        panel = make_panel(np.full((80, 1), 25.0))
        tech = technicals(panel)
        np.testing.assert_allclose(tech["macd_hist"][40:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(tech["mean_rev_20d"][20:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(tech["pct_b"][19:, 0], 0.5)
        np.testing.assert_allclose(tech["rsi_14"][14:, 0], 50.0)

    def test_sine_wave_rsi_matches_wilder_oracle(self):
        t = np.arange(160)
        close = (100 + 10 * np.sin(2 * np.pi * t / 40))[:, None]
        panel = make_panel(close)
        rsi = technicals(panel)["rsi_14"][:, 0]

        # Independent scalar Wilder recursion.
        period = 14
        deltas = np.diff(close[:, 0])
        gains = np.where(deltas > 0, deltas, 0.0)
        losses = np.where(deltas < 0, -deltas, 0.0)
        expected = np.full(160, np.nan)
        avg_g = gains[:period].mean()
        avg_l = losses[:period].mean()

        def to_rsi(g, l):
            if l > 0:
                return 100.0 - 100.0 / (1.0 + g / l)
            return 100.0 if g > 0 else 50.0

        expected[period] = to_rsi(avg_g, avg_l)
        for i in range(period, len(deltas)):
            avg_g = (avg_g * (period - 1) + gains[i]) / period
            avg_l = (avg_l * (period - 1) + losses[i]) / period
            expected[i + 1] = to_rsi(avg_g, avg_l)

        assert np.nanstd(rsi) > 1.0  # it oscillates
        np.testing.assert_allclose(rsi[period:], expected[period:], atol=1e-10)

    def test_dist_from_high_nonpositive(self, rng):
        panel = make_panel(rng.uniform(10, 30, size=(60, 2)))
        d = technicals(panel)["dist_high_20d"]
        assert np.nanmax(d) <= 1e-12


class TestGlobalFeatures:
    def _panel(self, rng, T=320, N=4):
        close = 50 * np.exp(np.cumsum(rng.normal(1e-4, 0.01, size=(T, N)), axis=0))
        return make_panel(close)

    def test_breadth_all_up(self):
        T = 330
        close = np.exp(np.linspace(0, 1, T))[:, None] * np.ones((T, 3)) * 20
        panel = make_panel(close)
        uni = full_universe(panel, benchmark="A02")
        g, _ = global_features(panel, uni)
        breadth = g[:, 4]
        np.testing.assert_allclose(breadth[20:], 1.0)

    def test_breadth_two_thirds(self, rng):
        T = 40
        close = np.ones((T, 4)) * 10
        close[:, 0] *= np.exp(np.linspace(0, 0.5, T))   # up
        close[:, 1] *= np.exp(-np.linspace(0, 0.5, T))  # down
        close[:, 2] *= np.exp(np.linspace(0, 0.2, T))   # up
        panel = make_panel(close)
        uni = full_universe(panel, benchmark="A03")
        g, _ = global_features(panel, uni)
        assert g[-1, 4] == pytest.approx(2.0 / 3.0)

    def test_vol_index_proxy_flag(self, rng):
        panel = self._panel(rng)
        uni = full_universe(panel)
        _, is_proxy = global_features(panel, uni)
        assert is_proxy
        dates = panel.dates
        supplied = (dates, np.full(panel.n_days, 16.0))
        g, is_proxy2 = global_features(panel, uni, vol_index=supplied)
        assert not is_proxy2
        np.testing.assert_allclose(g[:, 0], 16.0)
        np.testing.assert_allclose(g[5:, 1], 0.0)


class TestComputeFeatures:
    def test_first_ready_matches_warmup(self, rng):
        T = FEATURE_WARMUP + 40
        close = 50 * np.exp(np.cumsum(rng.normal(2e-4, 0.01, size=(T, 5)), axis=0))
        panel = make_panel(close)
        uni = full_universe(panel)
        tensor = compute_features(panel, uni)
        assert tensor.first_ready == FEATURE_WARMUP
        assert np.isfinite(tensor.global_features[tensor.ready]).all()

    def test_selected_windows_have_no_nans(self, rng):
        T = FEATURE_WARMUP + 30
        close = 50 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(T, 6)), axis=0))
        panel = make_panel(close)
        uni = full_universe(panel)
        tensor = compute_features(panel, uni)
        sel = selection_series(panel, uni, 3)
        for t in range(tensor.first_ready, T):
            window = tensor.asset_features[t - 59: t + 1, sel.row(t), :]
            assert np.isfinite(window).all()

    def test_point_in_time_truncation_equivalence(self, rng):
        """Feature values at t are unchanged by dropping data after t."""
        T = FEATURE_WARMUP + 25
        close = 50 * np.exp(np.cumsum(rng.normal(0, 0.012, size=(T, 4)), axis=0))
        panel_full = make_panel(close)
        uni_full = full_universe(panel_full)
        tensor_full = compute_features(panel_full, uni_full)

        cut = FEATURE_WARMUP + 10
        panel_cut = make_panel(close[:cut])
        uni_cut = full_universe(panel_cut)
        tensor_cut = compute_features(panel_cut, uni_cut)

        np.testing.assert_allclose(tensor_cut.asset_features[: cut],
                                   tensor_full.asset_features[: cut], equal_nan=True)
        np.testing.assert_allclose(tensor_cut.global_features[: cut],
                                   tensor_full.global_features[: cut], equal_nan=True)

    def test_rolling_vols_match_naive_oracle(self, rng):
        T = 120
        close = 50 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(T, 3)), axis=0))
        panel = make_panel(close)
        uni = full_universe(panel, benchmark="A02")
        tensor = compute_features(panel, uni)
        r1 = np.diff(np.log(close), axis=0)  # r1[i] = day i+1 panel return
        for w, col in ((5, 4), (20, 5)):
            for t in range(w + 2, T, 13):
                for j in range(3):
                    window = r1[t - w - 1: t - 1]  # panel returns at days t-w .. t-1
                    expected = np.sqrt(((window[:, j] - window[:, j].mean()) ** 2).mean())
                    got = tensor.asset_features[t, j, col]
                    assert got == pytest.approx(expected, rel=1e-10), (w, t, j)


class TestScaler:
    def test_frozen_statistics(self, rng):
        T = FEATURE_WARMUP + 60
        close = 40 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(T, 4)), axis=0))
        panel = make_panel(close)
        uni = full_universe(panel)
        tensor = compute_features(panel, uni)
        t0, t1 = FEATURE_WARMUP, FEATURE_WARMUP + 40
        scaler = FeatureScaler.fit(tensor, t0, t1)
        scaled = scaler.transform_asset(tensor.asset_features[t0:t1])
        flat = scaled.reshape(-1, scaled.shape[-1])
        means = np.nanmean(flat, axis=0)
        np.testing.assert_allclose(means, 0.0, atol=1e-10)

    def test_zero_variance_feature_left_centered(self):
        from rlfolio.features import FeatureTensor
        a = np.ones((10, 2, 3))
        g = np.ones((10, 2))
        tensor = FeatureTensor(dates=np.arange(10), assets=["x", "y"],
                               asset_features=a, global_features=g,
                               ready=np.ones(10, bool), vol_index_is_proxy=True)
        scaler = FeatureScaler.fit(tensor, 0, 10)
        out = scaler.transform_asset(a)
        np.testing.assert_allclose(out, 0.0)
