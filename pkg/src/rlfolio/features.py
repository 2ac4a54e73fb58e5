"""Asset-level and global state features plus top-k momentum pre-selection.

Asset features (13 per asset per day): multi-horizon log returns (1/5/20/60),
rolling vols (5/20) of daily log returns, Wilder RSI-14, MACD(12,26,9)
histogram, Bollinger %B (20d, +/-2 sigma), distance from the 20-day high,
mean reversion vs the 20-day MA, 60-day rolling beta to the market proxy,
and the 20-day log return kept as its own absolute-performance column.

Global features (7 per day): volatility-index level and its 5-day change
(substituted by annualized 20-day realized vol of the proxy x100 when no
index series is supplied), cross-sectional mean daily return of tradable
assets and its 5-day rolling vol, market breadth (share of tradable assets
with positive 20-day return), and 5/20-day proxy returns normalized by a
trailing 252-day z-score clipped to +/-5.

All features at date t use data at <= t only.  A calendar row is ``ready``
once every global feature is finite and the momentum window has passed; the
longest warm-up is the 252-day z-score on the 20-day proxy return, so the
first ready row of a gap-free panel is index ``FEATURE_WARMUP``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import PricePanel, TradableUniverse, log_returns
from .errors import EmptyUniverseError, InsufficientHistoryError

logger = logging.getLogger(__name__)

RETURN_HORIZONS = (1, 5, 20, 60)
VOL_WINDOWS = (5, 20)
RSI_PERIOD = 14
MACD_FAST, MACD_SLOW, MACD_SIGNAL = 12, 26, 9
BOLL_WINDOW = 20
BETA_WINDOW = 60
MOMENTUM_WINDOW = 120
ZSCORE_WINDOW = 252
ZSCORE_CLIP = 5.0
BREADTH_HORIZON = 20
REALIZED_VOL_WINDOW = 20

ASSET_FEATURES = (
    "ret_1d", "ret_5d", "ret_20d", "ret_60d",
    "vol_5d", "vol_20d",
    "rsi_14", "macd_hist", "pct_b", "dist_high_20d", "mean_rev_20d",
    "beta_60d", "abs_ret_20d",
)
GLOBAL_FEATURES = (
    "vol_index", "vol_index_chg_5d",
    "xsec_mean_ret", "xsec_vol_5d",
    "breadth",
    "proxy_z_5d", "proxy_z_20d",
)

# First calendar index where every feature of a gap-free panel is defined:
# the 20-day proxy return needs t >= 20 and its 252-point z-score another
# 251 observations.
FEATURE_WARMUP = BREADTH_HORIZON + ZSCORE_WINDOW - 1


@dataclass
class FeatureTensor:
    """Per-asset and global feature matrices aligned with the panel calendar."""

    dates: np.ndarray                 # (T,)
    assets: list[str]
    asset_features: np.ndarray        # (T, N, F_a) float64, NaN where undefined
    global_features: np.ndarray       # (T, F_g) float64
    ready: np.ndarray                 # (T,) bool
    vol_index_is_proxy: bool
    asset_names: tuple = ASSET_FEATURES
    global_names: tuple = GLOBAL_FEATURES

    @property
    def n_asset_features(self) -> int:
        return self.asset_features.shape[2]

    @property
    def n_global_features(self) -> int:
        return self.global_features.shape[1]

    @property
    def first_ready(self) -> int:
        idx = np.flatnonzero(self.ready)
        if idx.size == 0:
            raise InsufficientHistoryError("no ready rows in feature tensor")
        return int(idx[0])


@dataclass
class Selection:
    """Top-k momentum selection per date; rows padded with -1."""

    indices: np.ndarray               # (T, k) int32
    counts: np.ndarray                # (T,) int32
    k: int

    def row(self, t: int) -> np.ndarray:
        return self.indices[t, : self.counts[t]]


def momentum(panel: PricePanel, t: int, window: int = MOMENTUM_WINDOW) -> np.ndarray:
    """Simple momentum ``P_t / P_{t-window} - 1``; NaN where undefined."""
    if t < window:
        raise InsufficientHistoryError(f"momentum needs t >= {window}, got {t}")
    ok = panel.valid[t] & panel.valid[t - window]
    out = np.full(panel.n_assets, np.nan)
    out[ok] = panel.close[t, ok] / panel.close[t - window, ok] - 1.0
    return out


def select_top_k(momentum_row: np.ndarray, mask_row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k strongest-momentum tradable assets.

    Deterministic: sorted by descending momentum, ties broken by ascending
    asset index (panel assets are sorted by identifier, so index order is
    identifier order).  Returns all tradable assets when fewer than k exist.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cand = np.flatnonzero(mask_row & np.isfinite(momentum_row))
    if cand.size == 0:
        raise EmptyUniverseError("no tradable assets with defined momentum")
    order = np.lexsort((cand, -momentum_row[cand]))
    return cand[order][:k].astype(np.int32)


def selection_series(panel: PricePanel, universe: TradableUniverse, k: int,
                     window: int = MOMENTUM_WINDOW) -> Selection:
    """Top-k selection for every date with enough history (others empty)."""
    T = panel.n_days
    indices = np.full((T, k), -1, dtype=np.int32)
    counts = np.zeros(T, dtype=np.int32)
    for t in range(window, T):
        mom = momentum(panel, t, window)
        cand = np.flatnonzero(universe.mask[t] & np.isfinite(mom))
        if cand.size == 0:
            continue
        order = np.lexsort((cand, -mom[cand]))
        chosen = cand[order][:k]
        indices[t, : chosen.size] = chosen
        counts[t] = chosen.size
    return Selection(indices=indices, counts=counts, k=k)


def rolling_beta(asset_returns: np.ndarray, market_returns: np.ndarray,
                 window: int = BETA_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window beta ``Cov(r_a, r_m) / Var(r_m)`` (two-pass per window).

    Returns ``(beta, degenerate)``; beta is NaN before the window fills or
    where any input in the window is NaN, and 0 with ``degenerate`` set where
    the market variance vanishes.
    """
    x = np.asarray(asset_returns, dtype=float)
    m = np.asarray(market_returns, dtype=float)
    if x.shape != m.shape or x.ndim != 1:
        raise ValueError("asset and market return series must be equal-length 1-D")
    if window > x.size:
        raise InsufficientHistoryError(f"window {window} > series length {x.size}")
    beta = np.full(x.size, np.nan)
    degenerate = np.zeros(x.size, dtype=bool)
    xw = np.lib.stride_tricks.sliding_window_view(x, window)
    mw = np.lib.stride_tricks.sliding_window_view(m, window)
    ok = np.isfinite(xw).all(axis=1) & np.isfinite(mw).all(axis=1)
    dx = xw - xw.mean(axis=1, keepdims=True)
    dm = mw - mw.mean(axis=1, keepdims=True)
    cov = (dx * dm).mean(axis=1)
    var = (dm * dm).mean(axis=1)
    t0 = window - 1
    degen = ok & (var <= 1e-18)
    good = ok & ~degen
    beta[t0:][good] = cov[good] / var[good]
    beta[t0:][degen] = 0.0
    degenerate[t0:] = degen
    return beta, degenerate


def _wilder_rsi(close: np.ndarray, valid: np.ndarray, period: int = RSI_PERIOD) -> np.ndarray:
    """Classic Wilder RSI: SMA seed over the first ``period`` changes, then
    recursive smoothing.  Vectorized across assets, one pass over time.
    RSI is 100 with zero average loss and 50 when both averages are zero.
    """
    T, N = close.shape
    out = np.full((T, N), np.nan)
    n_chg = np.zeros(N, dtype=np.int64)
    sum_gain = np.zeros(N)
    sum_loss = np.zeros(N)
    avg_gain = np.full(N, np.nan)
    avg_loss = np.full(N, np.nan)
    for t in range(1, T):
        pair = valid[t] & valid[t - 1]
        if not pair.any():
            continue
        delta = np.zeros(N)
        delta[pair] = close[t, pair] - close[t - 1, pair]
        gain = np.where(delta > 0, delta, 0.0)
        loss = np.where(delta < 0, -delta, 0.0)

        seeding = pair & (n_chg < period)
        sum_gain[seeding] += gain[seeding]
        sum_loss[seeding] += loss[seeding]
        n_chg[pair] += 1
        just_seeded = seeding & (n_chg == period)
        avg_gain[just_seeded] = sum_gain[just_seeded] / period
        avg_loss[just_seeded] = sum_loss[just_seeded] / period

        running = pair & (n_chg > period)
        avg_gain[running] = (avg_gain[running] * (period - 1) + gain[running]) / period
        avg_loss[running] = (avg_loss[running] * (period - 1) + loss[running]) / period

        have = just_seeded | running
        if have.any():
            ag, al = avg_gain[have], avg_loss[have]
            rsi = np.where(
                al > 0, 100.0 - 100.0 / (1.0 + ag / np.where(al > 0, al, 1.0)),
                np.where(ag > 0, 100.0, 50.0),
            )
            out[t, have] = rsi
    return out


def technicals(panel: PricePanel) -> dict[str, np.ndarray]:
    """RSI, MACD histogram, %B, distance-from-20d-high and mean-reversion.

    All matrices are (T, N) with NaN during each asset's warm-up; the MACD
    histogram is masked until 34 observations (26-day slow EMA plus 9-day
    signal) have accrued.
    """
    close = pd.DataFrame(np.where(panel.valid, panel.close, np.nan))
    obs_count = panel.valid.cumsum(axis=0)

    ema_fast = close.ewm(span=MACD_FAST, adjust=False).mean()
    ema_slow = close.ewm(span=MACD_SLOW, adjust=False).mean()
    macd = ema_fast - ema_slow
    signal = macd.ewm(span=MACD_SIGNAL, adjust=False).mean()
    hist = (macd - signal).to_numpy()
    hist[obs_count < MACD_SLOW + MACD_SIGNAL - 1] = np.nan

    ma = close.rolling(BOLL_WINDOW, min_periods=BOLL_WINDOW).mean()
    sd = close.rolling(BOLL_WINDOW, min_periods=BOLL_WINDOW).std(ddof=0)
    width = (4.0 * sd).to_numpy()
    pct_b = np.where(width > 1e-12,
                     (close.to_numpy() - (ma - 2.0 * sd).to_numpy()) / np.where(width > 1e-12, width, 1.0),
                     0.5)
    pct_b[~np.isfinite(ma.to_numpy())] = np.nan

    high = close.rolling(BOLL_WINDOW, min_periods=BOLL_WINDOW).max()
    dist_high = (close / high - 1.0).to_numpy()
    mean_rev = ((close - ma) / ma).to_numpy()

    return {
        "rsi_14": _wilder_rsi(panel.close, panel.valid),
        "macd_hist": hist,
        "pct_b": pct_b,
        "dist_high_20d": dist_high,
        "mean_rev_20d": mean_rev,
    }


def _align_series(panel_dates: np.ndarray, dates: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Forward-fill an external (date, value) series onto the panel calendar."""
    pos = np.searchsorted(dates, panel_dates, side="right") - 1
    out = np.full(panel_dates.size, np.nan)
    ok = pos >= 0
    out[ok] = values[pos[ok]]
    return out


def global_features(panel: PricePanel, universe: TradableUniverse,
                    vol_index: tuple[np.ndarray, np.ndarray] | None = None
                    ) -> tuple[np.ndarray, bool]:
    """Market-level feature block (T, len(GLOBAL_FEATURES)).

    Cross-sectional statistics are taken over tradable assets only.  When no
    volatility-index series is supplied the level is proxied by annualized
    20-day realized vol of the market proxy (x100), and the returned flag
    is True.
    """
    T = panel.n_days
    r1 = log_returns(panel, 1)
    r20 = log_returns(panel, BREADTH_HORIZON)
    proxy_j = panel.asset_index(universe.benchmark_asset)
    proxy_r1 = pd.Series(r1[:, proxy_j])

    mask = universe.mask
    usable = mask & np.isfinite(r1)
    counts = usable.sum(axis=1)
    sums = np.where(usable, r1, 0.0).sum(axis=1)
    xsec_mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    xsec_vol5 = pd.Series(xsec_mean).rolling(5, min_periods=5).std(ddof=1).to_numpy()

    r20_masked = np.where(mask & np.isfinite(r20), r20, np.nan)
    pos = (r20_masked > 0).sum(axis=1)
    tot = np.isfinite(r20_masked).sum(axis=1)
    breadth = np.where(tot > 0, pos / np.maximum(tot, 1), np.nan)

    proxy_r5 = pd.Series(log_returns(panel, 5)[:, proxy_j])
    proxy_r20 = pd.Series(r20[:, proxy_j])

    def zscore(s: pd.Series) -> np.ndarray:
        mu = s.rolling(ZSCORE_WINDOW, min_periods=ZSCORE_WINDOW).mean()
        sd = s.rolling(ZSCORE_WINDOW, min_periods=ZSCORE_WINDOW).std(ddof=1)
        z = (s - mu) / sd.where(sd > 1e-12, np.nan)
        return z.clip(-ZSCORE_CLIP, ZSCORE_CLIP).to_numpy()

    if vol_index is not None:
        level = _align_series(panel.dates, vol_index[0], vol_index[1])
        is_proxy = False
    else:
        level = (proxy_r1.rolling(REALIZED_VOL_WINDOW, min_periods=REALIZED_VOL_WINDOW)
                 .std(ddof=1) * np.sqrt(252.0) * 100.0).to_numpy()
        is_proxy = True
        logger.info("no volatility index supplied; using proxy realized vol")
    chg5 = np.full(T, np.nan)
    chg5[5:] = level[5:] - level[:-5]

    out = np.column_stack([
        level, chg5, xsec_mean, xsec_vol5, breadth, zscore(proxy_r5), zscore(proxy_r20),
    ])
    return out, is_proxy


def compute_features(panel: PricePanel, universe: TradableUniverse,
                     vol_index: tuple[np.ndarray, np.ndarray] | None = None) -> FeatureTensor:
    """Assemble the full feature tensor for a panel."""
    rets = {h: log_returns(panel, h) for h in RETURN_HORIZONS}
    r1 = pd.DataFrame(rets[1])

    vols = {}
    for w in VOL_WINDOWS:
        # Daily-return vol over the w returns ending at t-1 (population form).
        vols[w] = r1.shift(1).rolling(w, min_periods=w).std(ddof=0).to_numpy()

    tech = technicals(panel)

    proxy_j = panel.asset_index(universe.benchmark_asset)
    market_r1 = rets[1][:, proxy_j]
    beta = np.full_like(rets[1], np.nan)
    for j in range(panel.n_assets):
        beta[:, j], _ = rolling_beta(
            np.where(np.isfinite(rets[1][:, j]), rets[1][:, j], np.nan),
            market_r1, BETA_WINDOW,
        )

    asset = np.stack([
        rets[1], rets[5], rets[20], rets[60],
        vols[5], vols[20],
        tech["rsi_14"], tech["macd_hist"], tech["pct_b"],
        tech["dist_high_20d"], tech["mean_rev_20d"],
        beta, rets[20],
    ], axis=2)

    glob, is_proxy = global_features(panel, universe, vol_index)
    ready = np.isfinite(glob).all(axis=1)
    ready[:MOMENTUM_WINDOW] = False

    return FeatureTensor(dates=panel.dates, assets=list(panel.assets),
                         asset_features=asset, global_features=glob,
                         ready=ready, vol_index_is_proxy=is_proxy)


@dataclass
class FeatureScaler:
    """Per-feature z-score scaler with statistics frozen on a training window."""

    asset_mean: np.ndarray
    asset_std: np.ndarray
    global_mean: np.ndarray
    global_std: np.ndarray

    @classmethod
    def fit(cls, tensor: FeatureTensor, t0: int, t1: int) -> "FeatureScaler":
        """Estimate statistics on rows [t0, t1) only, over finite entries."""
        a = tensor.asset_features[t0:t1].reshape(-1, tensor.n_asset_features)
        g = tensor.global_features[t0:t1]
        with np.errstate(invalid="ignore"):
            a_mean = np.nanmean(a, axis=0)
            a_std = np.nanstd(a, axis=0)
            g_mean = np.nanmean(g, axis=0)
            g_std = np.nanstd(g, axis=0)
        a_mean = np.where(np.isfinite(a_mean), a_mean, 0.0)
        g_mean = np.where(np.isfinite(g_mean), g_mean, 0.0)
        a_std = np.where(np.isfinite(a_std) & (a_std > 1e-12), a_std, 1.0)
        g_std = np.where(np.isfinite(g_std) & (g_std > 1e-12), g_std, 1.0)
        return cls(a_mean, a_std, g_mean, g_std)

    def transform_asset(self, window: np.ndarray) -> np.ndarray:
        return (window - self.asset_mean) / self.asset_std

    def transform_global(self, window: np.ndarray) -> np.ndarray:
        return (window - self.global_mean) / self.global_std
