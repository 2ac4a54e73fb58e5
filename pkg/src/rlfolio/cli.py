"""Command line entry points.

Subcommands::

    rlfolio run <config.yaml> [--seed N] [--threads N] [--output-dir DIR]
    rlfolio report <manifest.json> [...] [--output-dir DIR]
    rlfolio validate-data <prices.csv> <membership.csv> [vol_index.csv]

Exit codes: 0 success; otherwise the failing error's category (2 config,
3 data/parse, 4 numeric/domain, 5 training abort, 1 anything else).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import RlfolioError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlfolio",
                                     description="Walk-forward RL portfolio research engine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment from a YAML config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--output-dir", default=None)

    rep = sub.add_parser("report", help="rebuild reports from run manifests")
    rep.add_argument("manifests", nargs="+")
    rep.add_argument("--output-dir", default="reports")

    val = sub.add_parser("validate-data", help="check input files and print a summary")
    val.add_argument("prices")
    val.add_argument("membership")
    val.add_argument("vol_index", nargs="?", default=None)
    return parser


def _cmd_run(args) -> int:
    from .experiment import load_config, run_experiment
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    manifest = run_experiment(config, output_dir=args.output_dir, threads=args.threads)
    print(f"run complete: market={manifest.market} folds={len(manifest.folds)} "
          f"hash={manifest.config_hash}")
    return 0


def _cmd_report(args) -> int:
    from .experiment import report
    written = report(args.manifests, args.output_dir)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def _cmd_validate(args) -> int:
    from .data import build_universe, load_membership, load_prices, load_series
    from .features import compute_features
    panel = load_prices(args.prices)
    events = load_membership(args.membership)
    assets_with_events = {ev.asset for ev in events}
    benchmark = next((a for a in panel.assets if a not in assets_with_events),
                     panel.assets[-1])
    universe = build_universe(panel, events, benchmark)
    vol = load_series(args.vol_index) if args.vol_index else None
    tensor = compute_features(panel, universe, vol)
    counts = universe.constituent_counts
    print(f"days: {panel.n_days} ({panel.dates[0]}..{panel.dates[-1]})")
    print(f"assets: {panel.n_assets}; membership events: {len(events)}")
    print(f"constituents per day: min={counts.min()} max={counts.max()}")
    print(f"feature-ready from index {tensor.first_ready} "
          f"({tensor.dates[tensor.first_ready]}); "
          f"vol index {'proxied' if tensor.vol_index_is_proxy else 'supplied'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "report": _cmd_report, "validate-data": _cmd_validate}
    try:
        return handlers[args.command](args)
    except RlfolioError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
