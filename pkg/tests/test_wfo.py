import numpy as np
import pytest

from rlfolio.errors import DegenerateSharpeError, EmptyScheduleError
from rlfolio.wfo import (
    RetrainTrace,
    make_folds,
    monthly_sharpe_summary,
    plan_folds,
    retrain_decision,
    select_hyperparams,
    validation_sharpe,
)


class TestMakeFolds:
    def test_exact_minimum_one_fold(self):
        folds = make_folds(1260 + 252 + 252)
        assert len(folds) == 1
        f = folds[0]
        assert f.train == (0, 1260)
        assert f.valid == (1260, 1512)
        assert f.test == (1512, 1764)

    def test_one_stride_more_two_folds(self):
        assert len(make_folds(1764 + 252)) == 2

    def test_too_few_days_raises(self):
        with pytest.raises(EmptyScheduleError):
            make_folds(1763)

    def test_windows_never_overlap_and_tile(self):
        folds = make_folds(1764 + 5 * 252)
        for f in folds:
            assert f.train_start < f.train_end <= f.valid_end <= f.test_end
        for a, b in zip(folds, folds[1:]):
            assert b.test[0] == a.test[0] + 252
        tests = [f.test for f in folds]
        for (s0, e0), (s1, e1) in zip(tests, tests[1:]):
            assert s1 == e0  # out-of-sample windows concatenate with no gaps

    def test_offset_shifts_schedule(self):
        folds = make_folds(2100, offset=271)
        assert folds[0].train_start == 271

    def test_published_fold_count_on_ready_calendar(self):
        # 23 calendar years of trading days minus the feature warm-up.
        assert len(plan_folds(5836, warmup=271)) == 16


class TestValidationSharpe:
    def test_zero_vol_errors(self):
        with pytest.raises(DegenerateSharpeError):
            validation_sharpe(np.zeros(10))

    def test_direct_value(self):
        r = np.array([0.001, 0.011, -0.009])  # mean 0.001, sample std 0.01
        assert validation_sharpe(r) == pytest.approx(0.1 * np.sqrt(252), rel=1e-12)

    def test_sign_flip_negates(self, rng):
        r = rng.normal(1e-4, 0.01, size=100)
        assert validation_sharpe(-r) == pytest.approx(-validation_sharpe(r), rel=1e-12)

    def test_too_few_points(self):
        with pytest.raises(DegenerateSharpeError):
            validation_sharpe(np.array([0.01]))


class TestRetrainDecision:
    def test_documented_carry_case(self):
        d = retrain_decision(0.95, [1.0, 0.8, 1.2], consecutive_carries=0, k=5)
        assert d.threshold == pytest.approx(1.0 - 0.5 * 0.2)
        assert not d.retrain

    def test_negative_sharpe_always_retrains(self):
        d = retrain_decision(-0.1, [2.0, 2.0, 2.0], consecutive_carries=0, k=5)
        assert d.retrain and d.reason == "negative_sharpe"

    def test_carry_limit_triggers(self):
        d = retrain_decision(5.0, [1.0, 1.0, 1.0], consecutive_carries=3, k=9)
        assert d.retrain and d.reason == "carry_limit"

    def test_cold_start(self):
        assert retrain_decision(3.0, [], 0, k=0).retrain
        assert retrain_decision(3.0, [1.0, 1.0], 0, k=2).retrain
        assert retrain_decision(3.0, [1.0, 1.0], 0, k=7).retrain  # short history

    def test_below_threshold(self):
        d = retrain_decision(0.85, [1.0, 0.8, 1.2], consecutive_carries=0, k=5)
        assert d.retrain and d.reason == "below_threshold"

    def test_window_caps_at_five(self):
        history = [9.0, 9.0, 1.0, 0.8, 1.2, 1.0, 1.1]
        d = retrain_decision(5.0, history, 0, k=9)
        window = np.array(history[-5:])
        assert d.threshold == pytest.approx(np.median(window) - 0.5 * window.std(ddof=1))

    def test_pure_function(self):
        args = (0.95, [1.0, 0.8, 1.2], 1, 6)
        a, b = retrain_decision(*args), retrain_decision(*args)
        assert (a.retrain, a.threshold, a.reason) == (b.retrain, b.threshold, b.reason)


class TestSelectHyperparams:
    def test_single_candidate(self):
        assert select_hyperparams([0.5], [0.4]) == 0

    def test_consistent_candidate_beats_gappy(self):
        # Candidate 0: tiny gap, both positive. Candidate 1: higher validation
        # but a huge train/validation gap.
        assert select_hyperparams([0.6, 3.0], [0.5, 0.9]) == 0

    def test_all_negative_falls_back_to_global_max(self):
        assert select_hyperparams([-1.0, -2.0], [-0.7, -0.3]) == 1

    def test_tier2_positive_validation(self):
        # No candidate passes the gap test, one has positive validation.
        assert select_hyperparams([5.0, -1.0], [0.4, -0.2]) == 0


def test_monthly_sharpe_summary_skips_short_months():
    dates = np.arange("2020-01-01", "2020-03-01", dtype="datetime64[D]")
    r = np.full(dates.size, 0.001)
    r[::2] = 0.002
    score = monthly_sharpe_summary(dates, r, min_obs=15)
    assert np.isfinite(score)
    # A two-day series has no month with >= 15 observations.
    assert np.isnan(monthly_sharpe_summary(dates[:2], r[:2]))


def test_retrain_trace_csv(tmp_path):
    trace = RetrainTrace()
    trace.add(0, 1.25, None, "retrain")
    trace.add(1, 0.75, 0.9, "carry")
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "fold,val_sharpe,threshold,decision"
    assert lines[1].startswith("0,1.25,,retrain")
