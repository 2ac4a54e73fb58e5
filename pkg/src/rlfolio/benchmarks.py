"""Classical reference strategies on the tradable universe.

Four benchmarks share one monthly-rebalance simulator with the same
turnover-proportional cost model as the learned strategies (2 bps per unit
of L1 turnover); buy-and-hold alone is cost-free index exposure.  The
minimum-variance portfolio solves a long-only, fully-invested,
position-capped QP with an accelerated projected-gradient method to a
KKT fixed-point residual of 1e-8.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import PricePanel, TradableUniverse, log_returns
from .errors import InfeasibleError, InsufficientHistoryError, RlfolioError
from .features import MOMENTUM_WINDOW, Selection, momentum, select_top_k

logger = logging.getLogger(__name__)

REBALANCE_DAYS = 21
COV_WINDOW = 1260
DEFAULT_MAX_POSITION = 0.10
KKT_TOL = 1e-10
_MAX_ITERS = 200_000


@dataclass
class BenchmarkSpec:
    kind: str = "buy_hold"            # buy_hold | momentum_top20 | equal_weight_monthly | min_variance
    rebalance_days: int = REBALANCE_DAYS
    max_position: float = DEFAULT_MAX_POSITION
    cov_window: int = COV_WINDOW
    top_n: int = 20
    tc_bps: float = 2.0

    def __post_init__(self):
        if self.rebalance_days < 1:
            raise ValueError("rebalance_days must be >= 1")
        if not 0.0 < self.max_position <= 1.0:
            raise ValueError("max_position must be in (0, 1]")


@dataclass
class BenchmarkResult:
    name: str
    dates: np.ndarray
    returns: np.ndarray               # daily net simple returns
    turnovers: np.ndarray
    weights: np.ndarray               # (T, N + 1) asset weights plus cash
    assets: list[str]

    @property
    def adt_percent(self) -> float:
        return float(self.turnovers.mean() * 100.0)


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto ``{w : 0 <= w <= cap, sum w = 1}``."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if cap * n < 1.0 - 1e-12:
        raise InfeasibleError(f"cap {cap} with {n} assets cannot reach full investment")
    lo, hi = v.min() - cap - 1.0, v.max()
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, cap).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    w = np.clip(v - tau, 0.0, cap)
    # Exact refinement on the identified active sets.
    free = (w > 0) & (w < cap)
    if free.any():
        n_cap = int((w >= cap).sum())
        tau = (v[free].sum() - (1.0 - cap * n_cap)) / free.sum()
        w = np.clip(v - tau, 0.0, cap)
    return w


def min_variance_weights(cov: np.ndarray, max_position: float = DEFAULT_MAX_POSITION,
                         tol: float = KKT_TOL) -> np.ndarray:
    """Long-only capped minimum-variance weights.

    Accelerated projected gradient from the (symmetric) equal-weight start;
    ridge repair is applied when the smallest eigenvalue falls below 1e-10.
    Stops at the step-normalized fixed-point residual
    ``||w - P(w - grad/L)||_inf <= tol``, which is invariant to rescaling
    the covariance.
    """
    sigma = np.asarray(cov, dtype=float)
    n = sigma.shape[0]
    if sigma.shape != (n, n):
        raise ValueError("covariance must be square")
    sigma = 0.5 * (sigma + sigma.T)
    eigs = np.linalg.eigvalsh(sigma)
    if eigs[0] < 1e-10:
        sigma = sigma + (1e-8 * np.trace(sigma) / n) * np.eye(n)
        eigs = np.linalg.eigvalsh(sigma)
    lip = 2.0 * eigs[-1]
    if lip <= 0:
        raise InfeasibleError("covariance has no positive curvature")

    w = project_capped_simplex(np.full(n, 1.0 / n), max_position)
    y = w.copy()
    t_acc = 1.0
    for _ in range(_MAX_ITERS):
        w_next = project_capped_simplex(y - (2.0 * sigma @ y) / lip, max_position)
        if w_next @ sigma @ w_next > w @ sigma @ w:
            # Objective rose: restart the momentum sequence.
            y, t_acc = w.copy(), 1.0
            w_next = project_capped_simplex(y - (2.0 * sigma @ y) / lip, max_position)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
        y = w_next + ((t_acc - 1.0) / t_next) * (w_next - w)
        w, t_acc = w_next, t_next
        residual = np.abs(w - project_capped_simplex(w - (2.0 * sigma @ w) / lip,
                                                     max_position)).max()
        if residual <= tol:
            return w
    raise RlfolioError(f"min-variance solver failed to reach KKT residual {tol}")


def _step_returns(panel: PricePanel) -> np.ndarray:
    """Simple t -> t+1 returns, frozen at 0 where either price is invalid."""
    close, valid = panel.close, panel.valid
    ok = valid[:-1] & valid[1:]
    out = np.zeros_like(close)
    out[:-1][ok] = close[1:][ok] / close[:-1][ok] - 1.0
    return out


def simulate_rebalanced(panel: PricePanel, universe: TradableUniverse,
                        target_fn: Callable[[int], np.ndarray],
                        start: int, end: int, name: str,
                        rebalance_days: int = REBALANCE_DAYS,
                        tc_bps: float = 2.0) -> BenchmarkResult:
    """Drift-between-rebalances simulator with forced delisting liquidation.

    ``target_fn(t)`` returns asset weights (N,) summing to <= 1; the
    remainder sits in cash.  Targets are requested on rebalance dates only.
    """
    returns_mat = _step_returns(panel)
    n = panel.n_assets
    holdings = np.zeros(n)
    cash = 1.0
    pending_liq_to = 0.0
    rets, tos, weights = [], [], []
    for step, t in enumerate(range(start, end)):
        # Forced liquidation of holdings that left the tradable mask.
        gone = ~universe.mask[t] & (holdings > 0)
        if gone.any():
            moved = holdings[gone].sum()
            holdings[gone] = 0.0
            cash += moved
            pending_liq_to += 2.0 * moved

        if step % rebalance_days == 0:
            target = np.asarray(target_fn(t), dtype=float)
            target_cash = 1.0 - target.sum()
            to = np.abs(target - holdings).sum() + abs(target_cash - cash)
        else:
            target, target_cash, to = holdings, cash, 0.0
        to += pending_liq_to
        pending_liq_to = 0.0

        cost = tc_bps * 1e-4 * to
        gross = float(target @ returns_mat[t])
        rets.append(gross - cost)
        tos.append(to)
        weights.append(np.append(target, target_cash))

        growth = target * (1.0 + returns_mat[t])
        total = growth.sum() + target_cash
        holdings, cash = growth / total, target_cash / total
    return BenchmarkResult(name=name, dates=panel.dates[start:end],
                           returns=np.array(rets), turnovers=np.array(tos),
                           weights=np.array(weights), assets=list(panel.assets))


def buy_hold(panel: PricePanel, universe: TradableUniverse,
             start: int, end: int) -> BenchmarkResult:
    """Passive proxy exposure: its raw returns, zero turnover, no costs."""
    j = panel.asset_index(universe.benchmark_asset)
    r = _step_returns(panel)[start:end, j]
    T = end - start
    weights = np.zeros((T, panel.n_assets + 1))
    weights[:, j] = 1.0
    return BenchmarkResult(name="buy_hold", dates=panel.dates[start:end],
                           returns=r, turnovers=np.zeros(T),
                           weights=weights, assets=list(panel.assets))


def momentum_top20(panel: PricePanel, universe: TradableUniverse,
                   start: int, end: int, spec: BenchmarkSpec | None = None) -> BenchmarkResult:
    """Equal weights over the top-N 120-day-momentum assets, monthly."""
    spec = spec or BenchmarkSpec(kind="momentum_top20")
    if start < MOMENTUM_WINDOW:
        raise InsufficientHistoryError(f"need {MOMENTUM_WINDOW} days before start")

    def target(t: int) -> np.ndarray:
        mom = momentum(panel, t)
        chosen = select_top_k(mom, universe.mask[t], spec.top_n)
        w = np.zeros(panel.n_assets)
        w[chosen] = 1.0 / chosen.size
        return w

    return simulate_rebalanced(panel, universe, target, start, end, "momentum_top20",
                               spec.rebalance_days, spec.tc_bps)


def equal_weight_monthly(panel: PricePanel, universe: TradableUniverse,
                         selection: Selection, start: int, end: int,
                         spec: BenchmarkSpec | None = None) -> BenchmarkResult:
    """1/k over the shared top-k momentum selection, rebalanced monthly."""
    spec = spec or BenchmarkSpec(kind="equal_weight_monthly")

    def target(t: int) -> np.ndarray:
        chosen = selection.row(t)
        w = np.zeros(panel.n_assets)
        if chosen.size:
            w[chosen] = 1.0 / chosen.size
        return w

    return simulate_rebalanced(panel, universe, target, start, end, "equal_weight_monthly",
                               spec.rebalance_days, spec.tc_bps)


def trailing_covariance(panel: PricePanel, t: int, window: int = COV_WINDOW
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of daily log returns over [t - window, t).

    Returns (cov, eligible_indices); only assets with a complete return
    window qualify.
    """
    if t < window:
        raise InsufficientHistoryError(f"need {window} days of history before t={t}")
    r1 = log_returns(panel, 1)[t - window + 1: t + 1]
    eligible = np.flatnonzero(np.isfinite(r1).all(axis=0))
    if eligible.size == 0:
        raise InsufficientHistoryError("no asset has a complete covariance window")
    return np.cov(r1[:, eligible], rowvar=False, ddof=1), eligible


def min_variance(panel: PricePanel, universe: TradableUniverse,
                 start: int, end: int, spec: BenchmarkSpec | None = None) -> BenchmarkResult:
    """Rolling-window capped minimum-variance portfolio, monthly rebalance."""
    spec = spec or BenchmarkSpec(kind="min_variance")

    def target(t: int) -> np.ndarray:
        cov, eligible = trailing_covariance(panel, t, spec.cov_window)
        tradable = eligible[universe.mask[t, eligible]]
        if tradable.size == 0:
            return np.zeros(panel.n_assets)
        sub = np.ix_(np.searchsorted(eligible, tradable), np.searchsorted(eligible, tradable))
        w_sub = min_variance_weights(cov[sub], spec.max_position)
        w = np.zeros(panel.n_assets)
        w[tradable] = w_sub
        return w

    return simulate_rebalanced(panel, universe, target, start, end, "min_variance",
                               spec.rebalance_days, spec.tc_bps)
