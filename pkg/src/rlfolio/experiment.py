"""End-to-end experiment orchestration and report generation.

One run covers a single market: ingest -> features -> walk-forward folds
with adaptive retraining and tiered hyperparameter selection -> per-fold
test evaluation -> benchmarks on the identical out-of-sample dates ->
metric/inference/regime reports.  Everything derives from one master seed
(per-fold seeds fan out through SHA-256), and all emitted files use
round-trip float formatting so a rerun with the same inputs is
byte-identical.

``report`` rebuilds the report bundle from one or more run manifests; with
several markets it adds the equal-weight cross-market ensemble section
against the averaged buy-and-hold benchmark.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .agents import EncoderSpec, PolicySpec, SACAgent, SACConfig, evaluate, train_epochs
from .benchmarks import (
    BenchmarkSpec,
    buy_hold,
    equal_weight_monthly,
    min_variance,
    momentum_top20,
)
from .data import build_universe, load_membership, load_prices, load_series
from .env import EnvConfig, PortfolioEnv
from .errors import ConfigError, DegenerateSharpeError
from .features import FeatureScaler, Selection, compute_features, selection_series
from .inference import inference_report
from .metrics import REPORT_COLUMNS, ensemble, equity_curve, metric_report, regime_slice
from .wfo import RetrainTrace, make_folds, monthly_sharpe_summary, retrain_decision, select_hyperparams, validation_sharpe

logger = logging.getLogger(__name__)

BENCHMARK_NAMES = ("buy_hold", "momentum_top20", "equal_weight_monthly", "min_variance")

CONFIGURATION_PRESETS: dict[str, dict] = {
    "LSTM_1": {"encoder_kind": "recurrent", "policy_structure": "flat",
               "relative_reward": False, "allow_cash": True, "k_candidates": [20, 30]},
    "LSTM_2": {"encoder_kind": "recurrent", "policy_structure": "hierarchical",
               "relative_reward": False, "allow_cash": True, "k_candidates": [20, 30]},
    "LSTM_NC_1": {"encoder_kind": "recurrent", "policy_structure": "flat",
                  "relative_reward": True, "allow_cash": False, "k_candidates": [10, 20]},
    "LSTM_NC_2": {"encoder_kind": "recurrent", "policy_structure": "flat",
                  "relative_reward": True, "allow_cash": False, "k_candidates": [20]},
    "TRANSFORMERS": {"encoder_kind": "attention", "policy_structure": "flat",
                     "relative_reward": False, "allow_cash": True, "k_candidates": [20, 30]},
}


@dataclass
class WfoWindows:
    train: int = 1260
    valid: int = 252
    test: int = 252
    stride: int = 252


@dataclass
class StatsOptions:
    bootstrap_reps: int = 5000
    mean_block: float = 20.0
    hac_lag: int | None = None


@dataclass
class ExperimentConfig:
    market: str
    prices: str
    membership: str
    benchmark_asset: str
    vol_index: str | None = None
    configuration: str | None = None
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    wfo: WfoWindows = field(default_factory=WfoWindows)
    k_candidates: list[int] = field(default_factory=lambda: [20, 30])
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    stats: StatsOptions = field(default_factory=StatsOptions)
    regimes: list[tuple[str, str]] = field(default_factory=list)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.configuration is not None:
            preset = CONFIGURATION_PRESETS.get(self.configuration)
            if preset is None:
                raise ConfigError(f"unknown configuration id {self.configuration!r}; "
                                  f"choose from {sorted(CONFIGURATION_PRESETS)}")
            mismatches = []
            if self.encoder.kind != preset["encoder_kind"]:
                mismatches.append(f"encoder.kind={self.encoder.kind!r}")
            if self.policy.structure != preset["policy_structure"]:
                mismatches.append(f"policy.structure={self.policy.structure!r}")
            if self.env.relative_reward != preset["relative_reward"]:
                mismatches.append(f"env.relative_reward={self.env.relative_reward}")
            if self.env.allow_cash != preset["allow_cash"]:
                mismatches.append(f"env.allow_cash={self.env.allow_cash}")
            if mismatches:
                raise ConfigError(
                    f"fields {mismatches} contradict configuration {self.configuration!r}")
        if not self.k_candidates:
            raise ConfigError("k_candidates must not be empty")

    def semantic_dict(self) -> dict:
        """Everything that affects results (output location excluded)."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        d["code_version"] = __version__
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    preset = CONFIGURATION_PRESETS.get(raw.get("configuration", "") or "")
    sections = {
        "env": EnvConfig, "sac": SACConfig, "encoder": EncoderSpec,
        "policy": PolicySpec, "wfo": WfoWindows, "benchmark": BenchmarkSpec,
        "stats": StatsOptions,
    }
    kwargs: dict = {}
    for name, cls in sections.items():
        body = dict(raw.pop(name, {}) or {})
        if preset:
            if name == "encoder":
                body.setdefault("kind", preset["encoder_kind"])
            elif name == "policy":
                body.setdefault("structure", preset["policy_structure"])
            elif name == "env":
                body.setdefault("relative_reward", preset["relative_reward"])
                body.setdefault("allow_cash", preset["allow_cash"])
        try:
            kwargs[name] = cls(**body)
        except TypeError as exc:
            raise ConfigError(f"bad {name!r} section: {exc}") from None
    if preset:
        raw.setdefault("k_candidates", list(preset["k_candidates"]))
    regimes = [tuple(r) for r in raw.pop("regimes", [])]
    try:
        return ExperimentConfig(regimes=regimes, **kwargs, **raw)
    except TypeError as exc:
        raise ConfigError(f"bad experiment config: {exc}") from None


def fold_seed(master: int, fold: int, candidate: int = 0) -> int:
    digest = hashlib.sha256(f"{master}:{fold}:{candidate}".encode()).digest()
    return int.from_bytes(digest[:4], "little") % (2**31 - 1)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def write_series_csv(path, dates: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    rows = ([str(d)] + [_fmt(columns[n][i]) for n in names] for i, d in enumerate(dates))
    _write_csv(path, ["date"] + names, rows)


def read_series_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[1:]
        dates, cols = [], {n: [] for n in names}
        for row in reader:
            dates.append(np.datetime64(row[0], "D"))
            for n, v in zip(names, row[1:]):
                cols[n].append(float(v))
    return np.array(dates, dtype="datetime64[D]"), {n: np.array(v) for n, v in cols.items()}


@dataclass
class FoldRecord:
    fold: int
    decision: str
    reason: str
    threshold: float | None
    val_sharpe: float
    chosen_k: int
    candidate_scores: list[dict]
    returns_csv: str
    weights_csv: str
    checkpoint: str


@dataclass
class RunManifest:
    market: str
    config_hash: str
    code_version: str
    seed: int
    strategies: list[str]
    returns_csv: str
    folds: list[FoldRecord]
    reports: dict[str, str]

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        raw["folds"] = [FoldRecord(**f) for f in raw["folds"]]
        return cls(**raw)


class _FoldRunner:
    """Shared context for training/evaluating models inside one experiment."""

    def __init__(self, config: ExperimentConfig, panel, universe, tensor):
        self.config = config
        self.panel = panel
        self.universe = universe
        self.tensor = tensor
        self._selections: dict[int, Selection] = {}

    def selection_for(self, k: int) -> Selection:
        if k not in self._selections:
            self._selections[k] = selection_series(self.panel, self.universe, k)
        return self._selections[k]

    def env_for(self, k: int, start: int, end: int, scaler: FeatureScaler) -> PortfolioEnv:
        env_cfg = replace(self.config.env, k=k)
        return PortfolioEnv(self.panel, self.universe, self.tensor,
                            self.selection_for(k), env_cfg, start, end, scaler)

    def new_agent(self, k: int, seed: int) -> SACAgent:
        return SACAgent(k=k, n_asset_features=self.tensor.n_asset_features,
                        n_global_features=self.tensor.n_global_features,
                        lookback=self.config.env.lookback,
                        encoder_spec=self.config.encoder,
                        policy_spec=self.config.policy,
                        config=self.config.sac,
                        allow_cash=self.config.env.allow_cash, seed=seed)

    def train_candidate(self, k: int, seed: int, fold) -> tuple[SACAgent, float, float]:
        scaler = FeatureScaler.fit(self.tensor, fold.train_start, fold.train_end)
        train_env = self.env_for(k, fold.train_start, fold.train_end, scaler)
        valid_env = self.env_for(k, fold.train_end, fold.valid_end, scaler)
        agent = self.new_agent(k, seed)
        train_epochs(train_env, agent, self.config.sac, valid_env)
        train_eval = evaluate(agent, train_env)
        valid_eval = evaluate(agent, valid_env)
        train_score = monthly_sharpe_summary(self.panel.dates[fold.train_start:fold.train_end],
                                             train_eval.returns)
        valid_score = monthly_sharpe_summary(self.panel.dates[fold.train_end:fold.valid_end],
                                             valid_eval.returns)
        return agent, train_score, valid_score

    def valid_sharpe(self, agent: SACAgent, fold) -> float:
        scaler = FeatureScaler.fit(self.tensor, fold.train_start, fold.train_end)
        env = self.env_for(agent.k, fold.train_end, fold.valid_end, scaler)
        try:
            return validation_sharpe(evaluate(agent, env).returns)
        except DegenerateSharpeError:
            return float("-inf")

    def test_eval(self, agent: SACAgent, fold):
        scaler = FeatureScaler.fit(self.tensor, fold.train_start, fold.train_end)
        env = self.env_for(agent.k, fold.valid_end, fold.test_end, scaler)
        return evaluate(agent, env)


def run_experiment(config: ExperimentConfig, output_dir: str | None = None,
                   threads: int = 1) -> RunManifest:
    """Execute the full walk-forward pipeline for one market."""
    import torch
    torch.set_num_threads(max(1, threads))

    # Load and validate every input before touching the output directory so
    # a bad config leaves no partial artifacts behind.
    panel = load_prices(config.prices)
    events = load_membership(config.membership)
    universe = build_universe(panel, events, config.benchmark_asset)
    vol = load_series(config.vol_index) if config.vol_index else None
    tensor = compute_features(panel, universe, vol)
    warmup = tensor.first_ready
    if warmup < config.env.lookback:
        raise ConfigError("lookback exceeds the feature warm-up prefix")

    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    folds = make_folds(panel.n_days, config.wfo.train, config.wfo.valid,
                       config.wfo.test, config.wfo.stride, offset=warmup)
    logger.info("%s: %d calendar days, %d ready, %d folds",
                config.market, panel.n_days, panel.n_days - warmup, len(folds))

    runner = _FoldRunner(config, panel, universe, tensor)
    trace = RetrainTrace()
    history: list[float] = []
    consecutive_carries = 0
    model: SACAgent | None = None
    fold_records: list[FoldRecord] = []
    test_dates, test_returns, test_turnovers = [], [], []
    chosen_k_by_fold: list[int] = []

    for fold in folds:
        fold_dir = out / f"fold_{fold.index:02d}"
        fold_dir.mkdir(exist_ok=True)
        if model is None or len(history) < 3:
            decision = retrain_decision(float("nan"), history, consecutive_carries, fold.index)
            s_eval = float("nan")
        else:
            s_eval = runner.valid_sharpe(model, fold)
            decision = retrain_decision(s_eval, history, consecutive_carries, fold.index)

        candidate_scores: list[dict] = []
        if decision.retrain:
            agents, train_scores, valid_scores = [], [], []
            for ci, k in enumerate(config.k_candidates):
                agent, ts, vs = runner.train_candidate(
                    k, fold_seed(config.seed, fold.index, ci), fold)
                agents.append(agent)
                train_scores.append(ts)
                valid_scores.append(vs)
                candidate_scores.append({"k": k, "train_monthly_sharpe": ts,
                                         "valid_monthly_sharpe": vs})
            chosen = select_hyperparams(train_scores, valid_scores)
            model = agents[chosen]
            consecutive_carries = 0
        else:
            consecutive_carries += 1

        s_final = runner.valid_sharpe(model, fold) if decision.retrain else s_eval
        history.append(s_final)
        trace.add(fold.index, s_final, decision.threshold,
                  "retrain" if decision.retrain else "carry")

        result = runner.test_eval(model, fold)
        dates = panel.dates[fold.valid_end:fold.test_end]
        returns_csv = fold_dir / "returns.csv"
        write_series_csv(returns_csv, dates, {"net_return": result.returns})
        weights_csv = fold_dir / "weights.csv"
        sel = runner.selection_for(model.k)
        rows = []
        for i, t in enumerate(range(fold.valid_end, fold.test_end)):
            names = [panel.assets[j] for j in sel.row(t)] + ["CASH"]
            live = len(names) - 1
            w = np.append(result.weights[i, :live], result.weights[i, -1])
            rows.extend([str(panel.dates[t]), n, _fmt(x)] for n, x in zip(names, w))
        _write_csv(weights_csv, ["date", "asset", "weight"], rows)
        checkpoint = fold_dir / "model.pt"
        model.save(checkpoint)

        fold_records.append(FoldRecord(
            fold=fold.index, decision="retrain" if decision.retrain else "carry",
            reason=decision.reason, threshold=decision.threshold, val_sharpe=s_final,
            chosen_k=model.k, candidate_scores=candidate_scores,
            returns_csv=str(returns_csv), weights_csv=str(weights_csv),
            checkpoint=str(checkpoint)))
        chosen_k_by_fold.append(model.k)
        test_dates.append(dates)
        test_returns.append(result.returns)
        test_turnovers.append(result.turnovers)

    trace_csv = out / "retrain_trace.csv"
    trace.write_csv(trace_csv)

    eval_dates = np.concatenate(test_dates)
    rl_returns = np.concatenate(test_returns)
    rl_turnovers = np.concatenate(test_turnovers)
    start, end = folds[0].valid_end, folds[-1].test_end

    strategy_name = config.configuration or "rl_agent"
    ew_selection = _per_fold_selection(runner, folds, chosen_k_by_fold)
    bench = {
        "buy_hold": buy_hold(panel, universe, start, end),
        "momentum_top20": momentum_top20(panel, universe, start, end, config.benchmark),
        "equal_weight_monthly": equal_weight_monthly(panel, universe, ew_selection,
                                                     start, end, config.benchmark),
        "min_variance": min_variance(panel, universe, start, end, config.benchmark),
    }

    returns_by_strategy = {strategy_name: rl_returns}
    turnovers_by_strategy = {strategy_name: rl_turnovers}
    for name, res in bench.items():
        returns_by_strategy[name] = res.returns
        turnovers_by_strategy[name] = res.turnovers

    returns_csv = out / "returns.csv"
    write_series_csv(returns_csv, eval_dates, returns_by_strategy)

    reports = _emit_reports(out, eval_dates, returns_by_strategy, turnovers_by_strategy,
                            config.stats, config.regimes, seed=config.seed)
    reports["retrain_trace"] = str(trace_csv)

    manifest = RunManifest(market=config.market, config_hash=config.config_hash(),
                           code_version=__version__, seed=config.seed,
                           strategies=list(returns_by_strategy),
                           returns_csv=str(returns_csv), folds=fold_records,
                           reports=reports)
    manifest.to_json(out / "manifest.json")
    return manifest


def _per_fold_selection(runner: _FoldRunner, folds, chosen_k_by_fold: list[int]) -> Selection:
    """Selection matching the RL agent's chosen k within each test window."""
    k_max = max(chosen_k_by_fold)
    base = runner.selection_for(k_max)
    indices = base.indices.copy()
    counts = base.counts.copy()
    for fold, k in zip(folds, chosen_k_by_fold):
        sel = runner.selection_for(k)
        sl = slice(fold.valid_end, fold.test_end)
        indices[sl, :] = -1
        indices[sl, :k] = sel.indices[sl]
        counts[sl] = sel.counts[sl]
    return Selection(indices=indices, counts=counts, k=k_max)


def _emit_reports(out: Path, dates: np.ndarray, returns: dict[str, np.ndarray],
                  turnovers: dict[str, np.ndarray], stats: StatsOptions,
                  regimes: list[tuple[str, str]], seed: int) -> dict[str, str]:
    """Metric, inference, regime and equity-curve files for one return set."""
    metric_rows = []
    for name, r in returns.items():
        rep = metric_report(r, turnovers.get(name))
        metric_rows.append([name] + [_fmt(v) for v in rep.as_row().values()])
    metrics_csv = out / "metrics.csv"
    _write_csv(metrics_csv, ["strategy"] + list(REPORT_COLUMNS), metric_rows)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump({row[0]: dict(zip(REPORT_COLUMNS, map(float, row[1:])))
                   for row in metric_rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")

    benchmark = returns.get("buy_hold")
    inference_rows = []
    if benchmark is not None:
        for name, r in returns.items():
            if name == "buy_hold":
                continue
            rng = np.random.default_rng(fold_seed(seed, 10_000 + len(inference_rows)))
            rep = inference_report(name, r, benchmark, n_reps=stats.bootstrap_reps,
                                   mean_block=stats.mean_block, rng=rng, lag=stats.hac_lag)
            inference_rows.append([
                name, rep.benchmark, _fmt(rep.mean_diff), _fmt(rep.hac_p),
                _fmt(rep.delta_sharpe), _fmt(rep.boot_p_sharpe),
                _fmt(rep.delta_ir2), _fmt(rep.boot_p_ir2),
                _fmt(rep.alpha), _fmt(rep.se_alpha), _fmt(rep.t_alpha), _fmt(rep.p_alpha)])
    inference_csv = out / "inference.csv"
    _write_csv(inference_csv,
               ["strategy", "benchmark", "mean_diff", "hac_p", "delta_sharpe",
                "boot_p_sharpe", "delta_ir2", "boot_p_ir2", "alpha", "se_alpha",
                "t_alpha", "p_alpha"], inference_rows)

    regime_rows = []
    for name, r in returns.items():
        for label, rep in regime_slice(dates, r, regimes, turnovers.get(name)):
            regime_rows.append([name, label] + [_fmt(v) for v in rep.as_row().values()])
    regimes_csv = out / "regimes.csv"
    _write_csv(regimes_csv, ["strategy", "period"] + list(REPORT_COLUMNS), regime_rows)

    eq_dates = np.concatenate([[dates[0] - np.timedelta64(1, "D")], dates])
    equity_csv = out / "equity.csv"
    write_series_csv(equity_csv, eq_dates,
                     {name: equity_curve(r) for name, r in returns.items()})

    return {"metrics": str(metrics_csv), "inference": str(inference_csv),
            "regimes": str(regimes_csv), "equity": str(equity_csv)}


def report(manifest_paths: list[str], output_dir: str,
           stats: StatsOptions | None = None,
           regimes: list[tuple[str, str]] | None = None) -> dict[str, str]:
    """Rebuild reports from run manifests; several markets add the ensemble."""
    stats = stats or StatsOptions()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = [RunManifest.from_json(p) for p in manifest_paths]

    written: dict[str, str] = {}
    per_market = []
    for man in manifests:
        dates, cols = read_series_csv(man.returns_csv)
        sub = out / man.market
        sub.mkdir(exist_ok=True)
        written[man.market] = str(sub)
        _emit_reports(sub, dates, cols, {}, stats, regimes or [], seed=man.seed)
        per_market.append((man, dates, cols))

    if len(manifests) >= 2:
        base_dates = per_market[0][1]
        for _, dates, _ in per_market[1:]:
            if dates.shape != base_dates.shape or not np.array_equal(dates, base_dates):
                raise ConfigError("ensemble requires identical out-of-sample date indexes")
        common = set.intersection(*({n for n in cols if n != "buy_hold"}
                                    for _, _, cols in per_market))
        ens_dir = out / "ensemble"
        ens_dir.mkdir(exist_ok=True)
        ens_returns = {"common_benchmark": ensemble(
            [cols["buy_hold"] for _, _, cols in per_market])}
        for name in sorted(common):
            ens_returns[name] = ensemble([cols[name] for _, _, cols in per_market])
        ens_ret_csv = ens_dir / "returns.csv"
        write_series_csv(ens_ret_csv, base_dates, ens_returns)

        bench = ens_returns["common_benchmark"]
        rows = []
        for name, r in ens_returns.items():
            rep = metric_report(r)
            rows.append([name] + [_fmt(v) for v in rep.as_row().values()])
        _write_csv(ens_dir / "metrics.csv", ["strategy"] + list(REPORT_COLUMNS), rows)
        inf_rows = []
        for i, (name, r) in enumerate(sorted(ens_returns.items())):
            if name == "common_benchmark":
                continue
            rng = np.random.default_rng(fold_seed(manifests[0].seed, 20_000 + i))
            rep = inference_report(name, r, bench, benchmark_name="common_benchmark",
                                   n_reps=stats.bootstrap_reps,
                                   mean_block=stats.mean_block, rng=rng, lag=stats.hac_lag)
            inf_rows.append([name, rep.benchmark, _fmt(rep.mean_diff), _fmt(rep.hac_p),
                             _fmt(rep.delta_sharpe), _fmt(rep.boot_p_sharpe),
                             _fmt(rep.delta_ir2), _fmt(rep.boot_p_ir2), _fmt(rep.alpha),
                             _fmt(rep.se_alpha), _fmt(rep.t_alpha), _fmt(rep.p_alpha)])
        _write_csv(ens_dir / "inference.csv",
                   ["strategy", "benchmark", "mean_diff", "hac_p", "delta_sharpe",
                    "boot_p_sharpe", "delta_ir2", "boot_p_ir2", "alpha", "se_alpha",
                    "t_alpha", "p_alpha"], inf_rows)
        written["ensemble"] = str(ens_dir)
    return written
