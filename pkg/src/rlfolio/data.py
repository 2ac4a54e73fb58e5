"""Price/membership ingestion and tradable-universe construction.

Input formats (UTF-8 CSV, ISO-8601 dates, ``.`` decimal separator):

* prices:      header ``date,asset,close``, one row per observation
* membership:  header ``asset,add_date,drop_date`` (``drop_date`` may be
  empty for an open-ended interval; the drop date itself is exclusive)
* vol index:   header ``date,value``

The calendar is the union of all observed price dates.  Missing prices are
forward-filled per asset; a filled cell is flagged separately from an
observed one so downstream code can distinguish them.  An asset is tradable
on a day iff its (forward-filled) index membership holds and a valid price
exists, which removes survivorship bias from every consumer of the mask.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    EmptyInputError,
    InsufficientHistoryError,
    MissingInputError,
    ParseError,
    UnknownAssetError,
)


def _open_csv(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise MissingInputError(f"cannot open {path}: {exc.strerror}") from None

logger = logging.getLogger(__name__)


@dataclass
class PricePanel:
    """Aligned daily close-price matrix with validity flags.

    ``close`` is NaN wherever no observed or forward-filled price exists.
    ``observed | filled`` is the validity mask; ``filled`` marks cells that
    were propagated from the most recent prior observation.
    """

    dates: np.ndarray          # datetime64[D], strictly increasing
    assets: list[str]          # sorted ascending
    close: np.ndarray          # (T, N) float64
    observed: np.ndarray       # (T, N) bool
    filled: np.ndarray         # (T, N) bool

    @property
    def valid(self) -> np.ndarray:
        return self.observed | self.filled

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def asset_index(self, asset: str) -> int:
        try:
            return self.assets.index(asset)
        except ValueError:
            raise UnknownAssetError(f"asset {asset!r} not in panel") from None

    def date_index(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i == len(self.dates) or self.dates[i] != d:
            raise KeyError(f"date {date} not in panel calendar")
        return i


@dataclass
class MembershipEvent:
    """One index membership interval; ``drop_date`` is exclusive."""

    asset: str
    add_date: dt.date
    drop_date: dt.date | None = None

    def __post_init__(self):
        if self.drop_date is not None and not self.add_date < self.drop_date:
            raise ParseError(
                f"membership interval for {self.asset!r} has "
                f"add_date {self.add_date} >= drop_date {self.drop_date}"
            )


@dataclass
class TradableUniverse:
    """Per-day membership-and-data-availability mask over panel assets."""

    mask: np.ndarray           # (T, N) bool, aligned with the panel
    benchmark_asset: str
    dates: np.ndarray = field(repr=False)
    assets: list[str] = field(repr=False)

    @property
    def constituent_counts(self) -> np.ndarray:
        """Number of tradable constituents per day."""
        return self.mask.sum(axis=1)


def _parse_date(text: str, line: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"bad date {text!r}", line) from None


def load_prices(path, calendar: tuple | None = None) -> PricePanel:
    """Load a ``date,asset,close`` CSV into an aligned, forward-filled panel.

    ``calendar`` optionally restricts rows to a (start, end) date range,
    both inclusive.  Duplicate (date, asset) rows and malformed rows raise
    :class:`ParseError` with the offending line number.  Assets left with
    zero valid observations (e.g. after range filtering) are dropped with
    a warning.
    """
    lo = np.datetime64(calendar[0], "D") if calendar else None
    hi = np.datetime64(calendar[1], "D") if calendar else None

    rows: dict[tuple[np.datetime64, str], float] = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")
        if [c.strip().lower() for c in header] != ["date", "asset", "close"]:
            raise ParseError("expected header 'date,asset,close'", 1)
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            date = np.datetime64(_parse_date(row[0], line), "D")
            asset = row[1].strip()
            if not asset:
                raise ParseError("empty asset identifier", line)
            try:
                close = float(row[2])
            except ValueError:
                raise ParseError(f"bad close {row[2]!r}", line) from None
            if not np.isfinite(close) or close < 0:
                raise ParseError(f"close must be finite and >= 0, got {row[2]}", line)
            if lo is not None and (date < lo or date > hi):
                continue
            key = (date, asset)
            if key in rows:
                raise ParseError(f"duplicate (date, asset) pair {row[0]},{asset}", line)
            rows[key] = close

    if not rows:
        raise EmptyInputError(f"{path}: no price rows" + (" in calendar range" if calendar else ""))

    dates = np.array(sorted({d for d, _ in rows}), dtype="datetime64[D]")
    assets = sorted({a for _, a in rows})
    date_pos = {d: i for i, d in enumerate(dates)}
    asset_pos = {a: j for j, a in enumerate(assets)}

    close = np.full((len(dates), len(assets)), np.nan)
    observed = np.zeros_like(close, dtype=bool)
    for (d, a), c in rows.items():
        close[date_pos[d], asset_pos[a]] = c
        observed[date_pos[d], asset_pos[a]] = True

    close, filled = _forward_fill(close, observed)

    keep = observed.any(axis=0)
    if not keep.all():
        dropped = [a for a, k in zip(assets, keep) if not k]
        logger.warning("dropping %d asset(s) with no valid observations: %s", len(dropped), dropped)
        assets = [a for a, k in zip(assets, keep) if k]
        close, observed, filled = close[:, keep], observed[:, keep], filled[:, keep]

    return PricePanel(dates=dates, assets=assets, close=close, observed=observed, filled=filled)


def _forward_fill(close: np.ndarray, observed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the most recent observation down each column.

    Cells before an asset's first observation stay NaN.  Idempotent: the
    filled panel has no interior gaps left to fill.
    """
    t_idx = np.arange(close.shape[0])[:, None]
    last_obs = np.where(observed, t_idx, -1)
    last_obs = np.maximum.accumulate(last_obs, axis=0)
    has_source = last_obs >= 0
    out = np.full_like(close, np.nan)
    cols = np.broadcast_to(np.arange(close.shape[1]), close.shape)
    out[has_source] = close[last_obs[has_source], cols[has_source]]
    filled = has_source & ~observed
    return out, filled


def load_membership(path) -> list[MembershipEvent]:
    """Load ``asset,add_date,drop_date`` rows; empty drop_date = still a member."""
    events: list[MembershipEvent] = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")
        if [c.strip().lower() for c in header] != ["asset", "add_date", "drop_date"]:
            raise ParseError("expected header 'asset,add_date,drop_date'", 1)
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            asset = row[0].strip()
            if not asset:
                raise ParseError("empty asset identifier", line)
            add = _parse_date(row[1], line)
            drop = _parse_date(row[2], line) if row[2].strip() else None
            try:
                events.append(MembershipEvent(asset=asset, add_date=add, drop_date=drop))
            except ParseError as exc:
                raise ParseError(str(exc), line) from None
    return events


def load_series(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a ``date,value`` CSV (e.g. a volatility index) as sorted arrays."""
    dates, values = [], []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: empty file")
        if [c.strip().lower() for c in header] != ["date", "value"]:
            raise ParseError("expected header 'date,value'", 1)
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line)
            dates.append(np.datetime64(_parse_date(row[0], line), "D"))
            try:
                values.append(float(row[1]))
            except ValueError:
                raise ParseError(f"bad value {row[1]!r}", line) from None
    if not dates:
        raise EmptyInputError(f"{path}: no rows")
    order = np.argsort(np.array(dates))
    return np.array(dates)[order], np.array(values)[order]


def build_universe(panel: PricePanel, events: list[MembershipEvent], benchmark: str) -> TradableUniverse:
    """Combine forward-filled membership intervals with price validity.

    ``mask[t, i]`` is true iff asset ``i`` is a member of the index at date
    ``t`` (membership forward-filled between its add and drop events, drop
    exclusive) and a valid price exists.  With no events the mask is all
    false.  The benchmark proxy must exist in the panel but is not itself
    required to be a member.
    """
    panel.asset_index(benchmark)  # raises UnknownAssetError if absent
    member = np.zeros((panel.n_days, panel.n_assets), dtype=bool)
    for ev in events:
        j = panel.asset_index(ev.asset)
        lo = int(np.searchsorted(panel.dates, np.datetime64(ev.add_date, "D"), side="left"))
        if ev.drop_date is None:
            hi = panel.n_days
        else:
            hi = int(np.searchsorted(panel.dates, np.datetime64(ev.drop_date, "D"), side="left"))
        member[lo:hi, j] = True
    mask = member & panel.valid
    return TradableUniverse(mask=mask, benchmark_asset=benchmark,
                            dates=panel.dates, assets=list(panel.assets))


def log_returns(panel: PricePanel, horizon: int) -> np.ndarray:
    """Log returns ``ln(P_t / P_{t-horizon})`` per asset.

    NaN wherever either endpoint price is invalid.  Raises
    :class:`DomainError` if any valid price is non-positive and
    :class:`InsufficientHistoryError` if the panel is shorter than the
    horizon.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if horizon >= panel.n_days:
        raise InsufficientHistoryError(
            f"horizon {horizon} >= panel length {panel.n_days}"
        )
    valid = panel.valid
    if np.any(panel.close[valid] <= 0):
        raise DomainError("non-positive price in panel; log returns undefined")
    out = np.full_like(panel.close, np.nan)
    ok = valid[horizon:] & valid[:-horizon]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.log(panel.close[horizon:] / panel.close[:-horizon])
    out[horizon:][ok] = r[ok]
    return out
