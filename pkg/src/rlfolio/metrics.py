"""Performance metrics, regime slicing and cross-market aggregation.

Units follow the published reporting convention: AR/ARC/ASD/MD in percent,
MLD in years (252 trading days), turnover (ADT) as the time-averaged
percentage.  The information-ratio family is computed on those units:

    IR1 = ARC / ASD
    IR2 = IR1 * ARC * sign(ARC) / MD
    IR3 = ARC^3 / (ASD * MD * MLD)

Ratios with a vanishing denominator are reported as NaN markers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .errors import AlignmentError, DomainError

logger = logging.getLogger(__name__)

TRADING_DAYS = 252.0

REPORT_COLUMNS = ("AR", "ARC", "ASD", "MD", "MLD", "IR1", "IR2", "IR3", "Sharpe", "ADT")


@dataclass
class MetricReport:
    AR: float
    ARC: float
    ASD: float
    MD: float
    MLD: float
    IR1: float
    IR2: float
    IR3: float
    Sharpe: float
    ADT: float

    def as_row(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def equity_curve(returns: np.ndarray) -> np.ndarray:
    """Compounded value path starting at 1.0 (length T + 1)."""
    r = np.asarray(returns, dtype=float)
    return np.concatenate([[1.0], np.cumprod(1.0 + r)])


def ar(returns: np.ndarray) -> float:
    """Total cumulative return in percent."""
    r = np.asarray(returns, dtype=float)
    return float((np.prod(1.0 + r) - 1.0) * 100.0)


def arc(returns: np.ndarray) -> float:
    """Annualized compounded return in percent."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise DomainError("cannot annualize an empty return series")
    if np.any(r <= -1.0):
        raise DomainError("returns at or below -100% cannot be compounded")
    return float((np.prod(1.0 + r) ** (TRADING_DAYS / r.size) - 1.0) * 100.0)


def asd(returns: np.ndarray) -> float:
    """Annualized standard deviation in percent (sample std)."""
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise DomainError("need at least two returns for a standard deviation")
    return float(np.sqrt(TRADING_DAYS) * r.std(ddof=1) * 100.0)


def sharpe(returns: np.ndarray) -> float:
    r = np.asarray(returns, dtype=float)
    sd = r.std(ddof=1)
    return float(r.mean() / sd * np.sqrt(TRADING_DAYS)) if sd > 0 else float("nan")


def max_drawdown(equity: np.ndarray) -> float:
    """Worst peak-to-trough loss of a positive equity path, in percent."""
    v = np.asarray(equity, dtype=float)
    if np.any(v <= 0):
        raise DomainError("equity values must be positive")
    peaks = np.maximum.accumulate(v)
    return float(((peaks - v) / peaks).max() * 100.0)


def max_loss_duration(equity: np.ndarray) -> float:
    """Longest gap (in years) between consecutive running-maximum touches.

    A spell runs from a peak to the first later day at or above that peak;
    gaps with no underwater day in between do not count.  An unrecovered
    final spell counts through the last observation.
    """
    v = np.asarray(equity, dtype=float)
    if v.size == 0:
        raise DomainError("empty equity series")
    longest = 0
    peak_idx = 0
    for t in range(1, v.size):
        if v[t] >= v[peak_idx]:
            if t - peak_idx > 1:
                longest = max(longest, t - peak_idx)
            peak_idx = t
    if v.size - 1 > peak_idx:
        longest = max(longest, v.size - 1 - peak_idx)
    return longest / TRADING_DAYS


def ir_suite(arc_pct: float, asd_pct: float, md_pct: float, mld_years: float,
             returns: np.ndarray | None = None) -> tuple[float, float, float, float]:
    """(Sharpe, IR1, IR2, IR3) from the percent/years metric tuple.

    Sharpe needs the raw returns and is NaN when they are not supplied.
    Zero denominators yield NaN markers, except that a zero ARC gives
    exact zeros for all three ratios.
    """
    sr = sharpe(returns) if returns is not None else float("nan")
    if arc_pct == 0.0:
        return sr, 0.0, 0.0, 0.0
    ir1 = arc_pct / asd_pct if asd_pct > 0 else float("nan")
    ir2 = ir1 * arc_pct * np.sign(arc_pct) / md_pct if (md_pct > 0 and np.isfinite(ir1)) else float("nan")
    ir3 = (arc_pct ** 3 / (asd_pct * md_pct * mld_years)
           if (asd_pct > 0 and md_pct > 0 and mld_years > 0) else float("nan"))
    return sr, ir1, float(ir2), float(ir3)


def adt(weights_history: np.ndarray) -> float:
    """Time-averaged turnover of a weight-row history, in percent."""
    w = np.asarray(weights_history, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        raise DomainError("need at least two weight rows")
    return float(np.abs(np.diff(w, axis=0)).sum(axis=1).mean() * 100.0)


def adt_from_turnover(turnovers: np.ndarray) -> float:
    return float(np.asarray(turnovers, dtype=float).mean() * 100.0)


def metric_report(returns: np.ndarray, turnovers: np.ndarray | None = None) -> MetricReport:
    """Full metric suite for one daily net return series."""
    eq = equity_curve(returns)
    a, s = arc(returns), asd(returns)
    md = max_drawdown(eq)
    mld = max_loss_duration(eq)
    sr, ir1, ir2, ir3 = ir_suite(a, s, md, mld, returns)
    turnover_pct = adt_from_turnover(turnovers) if turnovers is not None else 0.0
    return MetricReport(AR=ar(returns), ARC=a, ASD=s, MD=md, MLD=mld,
                        IR1=ir1, IR2=ir2, IR3=ir3, Sharpe=sr, ADT=turnover_pct)


def regime_slice(dates: np.ndarray, returns: np.ndarray,
                 boundaries: list[tuple], turnovers: np.ndarray | None = None
                 ) -> list[tuple[str, MetricReport]]:
    """Metric suite per date-range slice; empty slices are skipped."""
    d = np.asarray(dates, dtype="datetime64[D]")
    r = np.asarray(returns, dtype=float)
    if d.size != r.size:
        raise AlignmentError("dates and returns must align")
    out = []
    for lo, hi in boundaries:
        sel = (d >= np.datetime64(lo, "D")) & (d <= np.datetime64(hi, "D"))
        if not sel.any():
            logger.warning("regime slice %s..%s is empty; skipped", lo, hi)
            continue
        tos = turnovers[sel] if turnovers is not None else None
        out.append((f"{lo}..{hi}", metric_report(r[sel], tos)))
    return out


def ensemble(returns_by_market: list[np.ndarray]) -> np.ndarray:
    """Equal-weight daily aggregation of aligned return series."""
    if len(returns_by_market) < 2:
        raise AlignmentError("ensemble needs at least two markets")
    arrays = [np.asarray(r, dtype=float) for r in returns_by_market]
    length = arrays[0].size
    if any(a.size != length for a in arrays):
        raise AlignmentError("ensemble series must share one date index")
    return np.mean(np.stack(arrays), axis=0)
