"""Walk-forward schedule, adaptive retraining and hyperparameter tiers.

Folds are non-anchored: fixed 1260/252/252-day train/validation/test
windows sliding by one 252-day trading year.  The experiment pipeline
plans folds on feature-ready days, i.e. after dropping the feature
warm-up prefix of the calendar.

Retraining at fold k is triggered by any of: negative validation Sharpe,
validation Sharpe below ``median(last m) - std(last m) / 2`` (sample std,
m <= 5), or three consecutive carried folds; with fewer than three past
validation scores the model always retrains (cold start).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DegenerateSharpeError, EmptyScheduleError

TRAIN_DAYS = 1260
VALID_DAYS = 252
TEST_DAYS = 252
STRIDE_DAYS = 252
ANNUALIZATION = 252.0
THRESHOLD_WINDOW = 5
MIN_HISTORY = 3
CARRY_LIMIT = 3
MONTHLY_MIN_OBS = 15
GAP_THRESHOLD = 0.5


@dataclass
class Fold:
    """Contiguous train/valid/test index ranges (half-open) on one calendar."""

    index: int
    train_start: int
    train_end: int
    valid_end: int
    test_end: int

    @property
    def train(self) -> tuple[int, int]:
        return self.train_start, self.train_end

    @property
    def valid(self) -> tuple[int, int]:
        return self.train_end, self.valid_end

    @property
    def test(self) -> tuple[int, int]:
        return self.valid_end, self.test_end


def make_folds(n_days: int, train: int = TRAIN_DAYS, valid: int = VALID_DAYS,
               test: int = TEST_DAYS, stride: int = STRIDE_DAYS,
               offset: int = 0) -> list[Fold]:
    """Maximal list of strided folds fitting ``n_days`` (starting at ``offset``)."""
    span = train + valid + test
    if n_days - offset < span:
        raise EmptyScheduleError(
            f"{n_days} days (offset {offset}) cannot fit one {span}-day fold")
    folds = []
    start = offset
    while start + span <= n_days:
        folds.append(Fold(index=len(folds), train_start=start, train_end=start + train,
                          valid_end=start + train + valid, test_end=start + span))
        start += stride
    return folds


def plan_folds(n_calendar_days: int, warmup: int, train: int = TRAIN_DAYS,
               valid: int = VALID_DAYS, test: int = TEST_DAYS,
               stride: int = STRIDE_DAYS) -> list[Fold]:
    """Fold schedule on the feature-ready calendar (warm-up prefix dropped).

    Fold indices refer to the original calendar: the first fold's training
    window starts at index ``warmup``.
    """
    return make_folds(n_calendar_days, train, valid, test, stride, offset=warmup)


def validation_sharpe(daily_net_returns: np.ndarray) -> float:
    """Annualized Sharpe ``mean / std * sqrt(252)`` with sample std."""
    r = np.asarray(daily_net_returns, dtype=float)
    if r.size < 2:
        raise DegenerateSharpeError(f"need >= 2 returns, got {r.size}")
    sd = r.std(ddof=1)
    if sd <= 0.0:
        raise DegenerateSharpeError("zero return volatility; Sharpe undefined")
    return float(r.mean() / sd * np.sqrt(ANNUALIZATION))


@dataclass
class RetrainDecision:
    retrain: bool
    threshold: float | None
    reason: str


def retrain_decision(s_k: float, history: list[float], consecutive_carries: int,
                     k: int, m: int = THRESHOLD_WINDOW,
                     carry_limit: int = CARRY_LIMIT) -> RetrainDecision:
    """Adaptive retraining rule; pure function of its inputs."""
    if k < MIN_HISTORY or len(history) < MIN_HISTORY:
        return RetrainDecision(True, None, "cold_start")
    window = np.asarray(history[-min(m, len(history)):], dtype=float)
    threshold = float(np.median(window) - 0.5 * window.std(ddof=1))
    if s_k < 0.0:
        return RetrainDecision(True, threshold, "negative_sharpe")
    if s_k < threshold:
        return RetrainDecision(True, threshold, "below_threshold")
    if consecutive_carries >= carry_limit:
        return RetrainDecision(True, threshold, "carry_limit")
    return RetrainDecision(False, threshold, "carry")


@dataclass
class RetrainTrace:
    """Per-fold record of the retraining decisions."""

    rows: list[dict] = field(default_factory=list)

    def add(self, fold: int, s_k: float, threshold: float | None, decision: str) -> None:
        self.rows.append({"fold": fold, "val_sharpe": s_k,
                          "threshold": threshold, "decision": decision})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "val_sharpe", "threshold", "decision"])
            for row in self.rows:
                thr = "" if row["threshold"] is None else repr(float(row["threshold"]))
                writer.writerow([row["fold"], repr(float(row["val_sharpe"])),
                                 thr, row["decision"]])


def monthly_sharpe_summary(dates: np.ndarray, returns: np.ndarray,
                           min_obs: int = MONTHLY_MIN_OBS) -> float:
    """Median across calendar months of the within-month annualized Sharpe.

    Months with fewer than ``min_obs`` observations or zero volatility are
    skipped; NaN when no month qualifies.
    """
    if len(dates) != len(returns):
        raise ValueError("dates and returns must align")
    frame = pd.DataFrame({"r": np.asarray(returns, dtype=float)},
                         index=pd.DatetimeIndex(np.asarray(dates, dtype="datetime64[D]")))
    sharpes = []
    for _, month in frame.groupby(pd.Grouper(freq="ME")):
        r = month["r"].to_numpy()
        if r.size < min_obs:
            continue
        sd = r.std(ddof=1)
        if sd <= 0:
            continue
        sharpes.append(r.mean() / sd * np.sqrt(ANNUALIZATION))
    return float(np.median(sharpes)) if sharpes else float("nan")


def select_hyperparams(train_scores: list[float], valid_scores: list[float],
                       gap_threshold: float = GAP_THRESHOLD) -> int:
    """Tiered candidate choice from monthly-Sharpe summaries.

    Tier 1: positive median monthly Sharpe on both splits and a
    train/validation gap below ``gap_threshold`` -- pick the best
    validation score among them.  Tier 2: best validation score among
    positive-validation candidates.  Tier 3: global best validation score.
    """
    if not train_scores or len(train_scores) != len(valid_scores):
        raise ValueError("need equal-length, non-empty score lists")
    t = np.asarray(train_scores, dtype=float)
    v = np.asarray(valid_scores, dtype=float)
    v_rank = np.where(np.isfinite(v), v, -np.inf)

    tier1 = np.flatnonzero((t > 0) & (v > 0) & (np.abs(t - v) < gap_threshold))
    if tier1.size:
        return int(tier1[np.argmax(v_rank[tier1])])
    tier2 = np.flatnonzero(v > 0)
    if tier2.size:
        return int(tier2[np.argmax(v_rank[tier2])])
    return int(np.argmax(v_rank))
