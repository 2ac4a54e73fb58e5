import datetime as dt

import numpy as np
import pytest

from rlfolio.data import MembershipEvent, build_universe
from rlfolio.synthetic import business_days, panel_from_arrays


def make_panel(close, start="2015-01-05", assets=None):
    """Panel from a fully-observed (T, N) price array."""
    close = np.atleast_2d(np.asarray(close, dtype=float))
    if close.shape[0] < close.shape[1] and close.ndim == 2 and assets is None:
        pass  # caller is responsible for orientation
    T, N = close.shape
    assets = assets or [f"A{j:02d}" for j in range(N)]
    return panel_from_arrays(business_days(T, start), assets, close)


def full_universe(panel, benchmark=None, include_benchmark=False):
    """Universe where every non-benchmark asset is a member for the whole sample."""
    benchmark = benchmark or panel.assets[-1]
    first = panel.dates[0].astype(dt.date)
    events = [MembershipEvent(asset=a, add_date=first) for a in panel.assets
              if include_benchmark or a != benchmark]
    return build_universe(panel, events, benchmark)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def drift_market_envs(seed, n_days=460, drift=1e-3, vol=0.01, lookback=10,
                      train_end=310, val_end=385, tc_bps=0.0,
                      turnover_penalty=0.0, concentration_penalty=0.0,
                      allow_cash=False):
    """3-asset market where only asset A000 drifts; toy return features.

    Returns (train_env, val_env, test_env, panel).  Feature columns are
    multi-horizon returns plus a short vol, scaled to unit-ish magnitude.
    """
    import pandas as pd

    from rlfolio.env import EnvConfig, PortfolioEnv
    from rlfolio.features import FeatureScaler, FeatureTensor, selection_series

    r = np.random.default_rng(seed)
    log_r = r.normal(0.0, vol, size=(n_days - 1, 3))
    log_r[:, 0] += drift
    close = 50 * np.exp(np.vstack([np.zeros(3), np.cumsum(log_r, axis=0)]))
    panel = panel_from_arrays(business_days(n_days), ["A000", "A001", "A002"], close)
    universe = full_universe(panel, benchmark="A002", include_benchmark=True)

    prices = pd.DataFrame(close)
    feats = []
    for h in (1, 5, 20):
        feats.append(np.log(prices / prices.shift(h)).to_numpy())
    feats.append(np.log(prices / prices.shift(1)).rolling(5).std(ddof=0).to_numpy())
    asset = np.stack(feats, axis=2)
    tensor = FeatureTensor(dates=panel.dates, assets=list(panel.assets),
                           asset_features=asset,
                           global_features=np.zeros((n_days, 0)),
                           ready=np.isfinite(asset).all(axis=(1, 2)),
                           vol_index_is_proxy=True,
                           asset_names=("r1", "r5", "r20", "v5"),
                           global_names=())

    config = EnvConfig(lookback=lookback, k=3, tc_bps=tc_bps,
                       turnover_penalty=turnover_penalty,
                       concentration_penalty=concentration_penalty,
                       allow_cash=allow_cash)
    selection = selection_series(panel, universe, 3, window=20)
    start = 30
    scaler = FeatureScaler.fit(tensor, start, train_end)
    envs = [PortfolioEnv(panel, universe, tensor, selection, config, s, e, scaler)
            for s, e in ((start, train_end), (train_end, val_end), (val_end, n_days - 1))]
    return (*envs, panel)


def toy_transitions(n, k=2, n_features=4, lookback=4, action_dim=None, seed=0,
                    dtype=np.float32):
    """Random transitions shaped like env output, for isolated agent tests."""
    from rlfolio.agents.replay import Transition

    r = np.random.default_rng(seed)
    action_dim = action_dim or k + 1
    out = []
    for i in range(n):
        a = r.dirichlet(np.ones(action_dim)).astype(dtype)
        out.append(Transition(
            asset_window=r.normal(size=(lookback, k, n_features)).astype(dtype),
            global_window=np.zeros((lookback, 0), dtype=dtype),
            action=a, reward=float(r.normal()),
            next_asset_window=r.normal(size=(lookback, k, n_features)).astype(dtype),
            next_global_window=np.zeros((lookback, 0), dtype=dtype),
            done=bool(i == n - 1)))
    return out


@pytest.fixture(scope="session")
def smoke_market(tmp_path_factory):
    """Small synthetic market on disk, shared across tests in one session."""
    from rlfolio.synthetic import make_smoke_market
    directory = tmp_path_factory.mktemp("smoke_market")
    prices, membership = make_smoke_market(directory, n_days=2300, n_assets=10, seed=2024)
    return {"dir": directory, "prices": prices, "membership": membership}
