"""Portfolio MDP: state windows, weight accounting, costs and rewards.

Timing convention: weights chosen at the close of day t earn the t -> t+1
asset returns; turnover is measured against the drifted (not previously
chosen) holdings, including the cash coordinate.  Cash earns zero.  An
asset that leaves the tradable mask while held is force-liquidated into
cash at its last valid price, with the round trip's L1 turnover charged at
the same cost rate as ordinary trades.

Rewards follow the two published formulations with their fixed scale
constants::

    absolute:  1000 * ln(1 + r_net) - lam_to * TO * 100
                                    - lam_conc * (HHI - HHI_min) * 100
    relative:  1000 * (ln(1 + r_net) - ln(1 + r_bench)) - penalties

HHI and its minimum are computed over the executable coordinates of the
action (selected assets plus cash when cash is allowed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PricePanel, TradableUniverse
from .errors import ConfigError, ContractViolation, WipeoutError
from .features import FeatureScaler, FeatureTensor, Selection

SIMPLEX_TOL = 1e-6
RETURN_SCALE = 1000.0
PENALTY_SCALE = 100.0


@dataclass
class EnvConfig:
    """Environment parameters; defaults follow the published configuration."""

    lookback: int = 60
    tc_bps: float = 2.0
    turnover_penalty: float = 0.003
    concentration_penalty: float = 0.0
    allow_cash: bool = True
    relative_reward: bool = False
    k: int = 20

    def __post_init__(self):
        if self.lookback < 1:
            raise ConfigError(f"lookback must be >= 1, got {self.lookback}")
        if self.tc_bps < 0:
            raise ConfigError(f"tc_bps must be >= 0, got {self.tc_bps}")
        if self.turnover_penalty < 0 or self.concentration_penalty < 0:
            raise ConfigError("penalty coefficients must be >= 0")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass
class PortfolioState:
    """Agent-facing snapshot at one date.

    ``weights`` live on the current selection's slots with cash last; any
    holdings outside today's selection have already been folded into cash
    (they cannot be re-expressed by the next action).  Feature windows are
    scaled, zero-padded on dead slots, and cover ``lookback`` rows ending
    at ``t``.
    """

    t: int
    selection: np.ndarray          # asset indices, length <= k
    weights: np.ndarray            # (k + 1,), sums to 1
    value: float
    asset_window: np.ndarray       # (lookback, k, F_a) float32
    global_window: np.ndarray      # (lookback, F_g) float32


@dataclass
class StepOutcome:
    gross_return: float
    cost: float
    net_return: float
    turnover: float
    hhi: float
    reward: float
    next_state: PortfolioState | None
    done: bool


def drift_weights(weights: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Weights after one period of price drift (pass 0 for the cash slot)."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(returns, dtype=float)
    if w.shape != r.shape:
        raise ValueError("weights and returns must have identical shape")
    growth = w * (1.0 + r)
    total = growth.sum()
    if total <= 0:
        raise WipeoutError(f"portfolio return {total - 1.0:.4f} wiped out the book")
    return growth / total


def turnover(w_new: np.ndarray, w_old: np.ndarray) -> float:
    """L1 distance between allocations, cash coordinate included."""
    return float(np.abs(np.asarray(w_new, float) - np.asarray(w_old, float)).sum())


def hhi(weights: np.ndarray) -> float:
    """Herfindahl-Hirschman concentration, minimum 1/N at equal weights."""
    w = np.asarray(weights, dtype=float)
    return float((w * w).sum())


def forced_liquidation(asset_weights: np.ndarray, cash: float,
                       tradable: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Move untradable holdings into cash; returns (weights, cash, turnover).

    The reported turnover counts both legs of each move (|dw_asset| plus
    |dw_cash|), matching the accounting of ordinary trades.
    """
    w = np.asarray(asset_weights, dtype=float).copy()
    gone = ~np.asarray(tradable, dtype=bool) & (w > 0)
    moved = float(w[gone].sum())
    w[gone] = 0.0
    return w, cash + moved, 2.0 * moved


def settle_step(exec_assets: np.ndarray, exec_cash: float,
                held_assets: np.ndarray, held_cash: float,
                asset_returns: np.ndarray, config: EnvConfig,
                benchmark_log_return: float | None = None,
                hhi_weights: np.ndarray | None = None,
                extra_turnover: float = 0.0,
                ) -> tuple[float, float, float, float, float, float, np.ndarray, float]:
    """Pure one-step accounting.

    ``exec_*`` are the executed target weights by asset (plus cash),
    ``held_*`` the pre-trade drifted holdings on the same coordinates, and
    ``extra_turnover`` any forced-liquidation turnover executed at the same
    close.  Returns (gross, cost, net, turnover, hhi, reward, drifted
    asset weights, drifted cash).
    """
    to = turnover(np.append(exec_assets, exec_cash),
                  np.append(held_assets, held_cash)) + extra_turnover
    cost = config.tc_bps * 1e-4 * to
    gross = float((exec_assets * asset_returns).sum())
    net = gross - cost
    if net <= -1.0:
        raise WipeoutError(f"net return {net:.4f} <= -100%")
    log_net = float(np.log1p(net))
    if config.relative_reward:
        if benchmark_log_return is None:
            raise ConfigError("relative reward requires a benchmark return")
        perf = log_net - benchmark_log_return
    else:
        perf = log_net

    hw = hhi_weights if hhi_weights is not None else np.append(exec_assets, exec_cash)
    concentration = hhi(hw)
    hhi_min = 1.0 / hw.size
    reward = (RETURN_SCALE * perf
              - config.turnover_penalty * to * PENALTY_SCALE
              - config.concentration_penalty * (concentration - hhi_min) * PENALTY_SCALE)

    growth = exec_assets * (1.0 + asset_returns)
    total = growth.sum() + exec_cash
    if total <= 0:
        raise WipeoutError("gross return <= -100%")
    return gross, cost, net, to, concentration, reward, growth / total, exec_cash / total


class PortfolioEnv:
    """Walk-forward window of the portfolio MDP over a feature tensor.

    One instance covers a contiguous [start, end] range of calendar indices
    and is single-threaded; independent instances share the immutable panel
    and tensors safely.
    """

    def __init__(self, panel: PricePanel, universe: TradableUniverse,
                 features: FeatureTensor, selection: Selection,
                 config: EnvConfig, start: int, end: int,
                 scaler: FeatureScaler | None = None):
        if selection.k != config.k:
            raise ConfigError(f"selection built for k={selection.k}, config k={config.k}")
        if start - config.lookback + 1 < 0:
            raise ConfigError("start index leaves no room for the lookback window")
        if end <= start:
            raise ConfigError("empty environment range")
        self.panel = panel
        self.universe = universe
        self.features = features
        self.selection = selection
        self.config = config
        self.start = start
        self.end = end
        self.scaler = scaler

        close, valid = panel.close, panel.valid
        step_ok = valid[:-1] & valid[1:]
        self._step_returns = np.zeros_like(close)
        self._step_returns[:-1][step_ok] = (close[1:][step_ok] / close[:-1][step_ok]) - 1.0

        j = panel.asset_index(universe.benchmark_asset)
        with np.errstate(invalid="ignore", divide="ignore"):
            proxy = np.log(close[1:, j] / close[:-1, j])
        self._proxy_log_returns = np.append(proxy, np.nan)

        self._t = start
        self._holdings = np.zeros(panel.n_assets)
        self._cash = 1.0
        self._value = 1.0
        self._pending_liq_turnover = 0.0

    @property
    def n_steps(self) -> int:
        return self.end - self.start

    def dates(self) -> np.ndarray:
        return self.panel.dates[self.start:self.end]

    def _window(self, t: int, sel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        L, k = self.config.lookback, self.config.k
        aw = np.zeros((L, k, self.features.n_asset_features), dtype=np.float32)
        raw = self.features.asset_features[t - L + 1: t + 1, sel, :]
        if self.scaler is not None:
            raw = self.scaler.transform_asset(raw)
        aw[:, : sel.size, :] = np.nan_to_num(raw, nan=0.0)
        gw = self.features.global_features[t - L + 1: t + 1]
        if self.scaler is not None:
            gw = self.scaler.transform_global(gw)
        return aw, np.nan_to_num(gw, nan=0.0).astype(np.float32)

    def _make_state(self, t: int) -> PortfolioState:
        sel = self.selection.row(t)
        k = self.config.k
        w = np.zeros(k + 1)
        w[: sel.size] = self._holdings[sel]
        # Off-selection holdings cannot be expressed by the next action;
        # liquidate them now so the state stays on the simplex.
        off = self._holdings.sum() - self._holdings[sel].sum()
        if off > 0:
            keep = np.zeros(self.panel.n_assets, dtype=bool)
            keep[sel] = True
            self._holdings = np.where(keep, self._holdings, 0.0)
            self._cash += off
            self._pending_liq_turnover += 2.0 * off
        w[k] = self._cash
        aw, gw = self._window(t, sel)
        return PortfolioState(t=t, selection=sel, weights=w, value=self._value,
                              asset_window=aw, global_window=gw)

    def reset(self) -> PortfolioState:
        self._t = self.start
        self._holdings = np.zeros(self.panel.n_assets)
        self._cash = 1.0
        self._value = 1.0
        self._pending_liq_turnover = 0.0
        return self._make_state(self._t)

    def _execute(self, action: np.ndarray, sel: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        """Validate and normalize an action onto today's live slots."""
        k = self.config.k
        a = np.asarray(action, dtype=float)
        if a.shape != (k + 1,):
            raise ContractViolation(f"action must have shape ({k + 1},), got {a.shape}")
        if not np.all(np.isfinite(a)) or a.min() < -SIMPLEX_TOL or abs(a.sum() - 1.0) > SIMPLEX_TOL:
            raise ContractViolation("action is off the probability simplex")
        a = np.clip(a, 0.0, None)
        live = sel.size
        assets = a[:live].copy()
        dead = a[live:k].sum()
        cash = a[k] + dead
        if not self.config.allow_cash:
            if assets.sum() <= 0:
                assets = np.full(live, 1.0 / live) if live else assets
            else:
                assets = assets / assets.sum()
            cash = 0.0
        total = assets.sum() + cash
        assets, cash = assets / total, cash / total
        exec_w = np.append(assets, cash) if self.config.allow_cash else assets
        return assets, cash, exec_w

    def step(self, action: np.ndarray) -> StepOutcome:
        t = self._t
        if t >= self.end:
            raise ContractViolation("episode already finished; call reset()")
        sel = self.selection.row(t)
        assets, cash, hhi_w = self._execute(action, sel)

        target = np.zeros(self.panel.n_assets)
        target[sel] = assets
        to_action = float(np.abs(target - self._holdings).sum() + abs(cash - self._cash))
        to_total = to_action + self._pending_liq_turnover
        self._pending_liq_turnover = 0.0

        cost = self.config.tc_bps * 1e-4 * to_total
        r = self._step_returns[t]
        gross = float((target * r).sum())
        net = gross - cost
        if net <= -1.0:
            raise WipeoutError(f"net return {net:.4f} <= -100% at t={t}")
        log_net = float(np.log1p(net))
        if self.config.relative_reward:
            rb = self._proxy_log_returns[t]
            if not np.isfinite(rb):
                raise ConfigError(f"benchmark return undefined at t={t}")
            perf = log_net - float(rb)
        else:
            perf = log_net
        concentration = hhi(hhi_w)
        reward = (RETURN_SCALE * perf
                  - self.config.turnover_penalty * to_total * PENALTY_SCALE
                  - self.config.concentration_penalty
                  * (concentration - 1.0 / hhi_w.size) * PENALTY_SCALE)

        growth = target * (1.0 + r)
        total = growth.sum() + cash
        self._holdings = growth / total
        self._cash = cash / total
        self._value *= (1.0 + net)
        self._t = t + 1

        done = self._t >= self.end
        if not done:
            held, new_cash, liq_to = forced_liquidation(
                self._holdings, self._cash, self.universe.mask[self._t])
            self._holdings, self._cash = held, new_cash
            self._pending_liq_turnover += liq_to
            next_state = self._make_state(self._t)
        else:
            next_state = None
        return StepOutcome(gross_return=gross, cost=cost, net_return=net,
                           turnover=to_total, hhi=concentration, reward=reward,
                           next_state=next_state, done=done)
