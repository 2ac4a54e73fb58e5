"""Synthetic market generators for smoke tests and experiments.

Prices follow independent lognormal walks with configurable drift and
volatility; the proxy column tracks an equal-weight basket of the assets
so betas, breadth and relative rewards stay meaningful.  Membership spans
the whole sample unless churn events are requested.
"""

from __future__ import annotations

import csv
import datetime as dt

import numpy as np
import pandas as pd

from .data import MembershipEvent, PricePanel


def business_days(n_days: int, start: str = "2010-01-04") -> np.ndarray:
    return pd.bdate_range(start=start, periods=n_days).values.astype("datetime64[D]")


def panel_from_arrays(dates: np.ndarray, assets: list[str], close: np.ndarray) -> PricePanel:
    """Wrap fully-observed price arrays as a panel (no gaps, nothing filled)."""
    close = np.asarray(close, dtype=float)
    observed = np.isfinite(close)
    return PricePanel(dates=np.asarray(dates, dtype="datetime64[D]"), assets=list(assets),
                      close=np.where(observed, close, np.nan),
                      observed=observed, filled=np.zeros_like(observed))


def synthetic_prices(n_days: int, n_assets: int, seed: int,
                     daily_drift: np.ndarray | None = None,
                     daily_vol: float = 0.01,
                     start: str = "2010-01-04",
                     proxy_name: str = "PROXY") -> tuple[np.ndarray, list[str], np.ndarray]:
    """Generate (dates, assets, close) with the proxy basket appended last."""
    rng = np.random.default_rng(seed)
    if daily_drift is None:
        daily_drift = rng.normal(2e-4, 2e-4, size=n_assets)
    shocks = rng.normal(0.0, daily_vol, size=(n_days - 1, n_assets))
    log_r = daily_drift[None, :] + shocks
    simple = np.expm1(log_r)
    basket = np.concatenate([[1.0], np.cumprod(1.0 + simple.mean(axis=1))])

    close = np.empty((n_days, n_assets + 1))
    close[0, :n_assets] = rng.uniform(20.0, 120.0, size=n_assets)
    close[1:, :n_assets] = close[0, :n_assets] * np.exp(np.cumsum(log_r, axis=0))
    close[:, n_assets] = 50.0 * basket

    assets = [f"A{i:03d}" for i in range(n_assets)] + [proxy_name]
    return business_days(n_days, start), assets, close


def full_membership(assets: list[str], dates: np.ndarray,
                    exclude: tuple[str, ...] = ("PROXY",)) -> list[MembershipEvent]:
    first = dates[0].astype(dt.date)
    return [MembershipEvent(asset=a, add_date=first, drop_date=None)
            for a in assets if a not in exclude]


def write_market_csvs(prices_path, membership_path, dates: np.ndarray,
                      assets: list[str], close: np.ndarray,
                      events: list[MembershipEvent]) -> None:
    with open(prices_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "asset", "close"])
        for i, d in enumerate(dates):
            for j, a in enumerate(assets):
                writer.writerow([str(d), a, repr(float(close[i, j]))])
    with open(membership_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["asset", "add_date", "drop_date"])
        for ev in events:
            writer.writerow([ev.asset, ev.add_date.isoformat(),
                             ev.drop_date.isoformat() if ev.drop_date else ""])


def make_smoke_market(directory, n_days: int = 2300, n_assets: int = 10,
                      seed: int = 2024) -> tuple[str, str]:
    """Write a small synthetic market; returns (prices_path, membership_path)."""
    from pathlib import Path
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dates, assets, close = synthetic_prices(n_days, n_assets, seed)
    events = full_membership(assets, dates)
    prices, membership = directory / "prices.csv", directory / "membership.csv"
    write_market_csvs(prices, membership, dates, assets, close, events)
    return str(prices), str(membership)
