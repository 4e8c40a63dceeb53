"""
Pathcast - Main Controller Script
Command-line entry point for ingesting market data, generating synthetic
markets, training the generative engines, running backtests and evaluating
stored ensembles
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

# Add the backend directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from backtest.backtester import run_backtest, train_cgm, load_frame
from backtest.reports import BacktestReport, emit_reports, json_safe
from backtest.synthetic import generate_synthetic
from bands.prediction_bands import SIDES, build_bands
from config.settings import BacktestConfig, ENGINES, db_path, load_config, load_environment, log_level
from database.run_store import RunStore
from exceptions import ConfigError, PathcastError, ShapeMismatch
from market_data.calendar import N_SUBPERIODS, DeliveryKey
from market_data.frame import MarketFrame, PricePath
from market_data.loader import MarketDataLoader, write_market_csv
from samplers.ensemble_io import load_ensemble
from scoring.scoring_rules import score_ensemble
from trading.strategies import band_decision, crystal_ball, majority_vote, naive_decisions, observed_best

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SKIPS = 3
EXIT_LEAKAGE = 4


def score_paths(paths: np.ndarray, observed: np.ndarray) -> Dict[str, Any]:
    """ES, DSS, VS and per-subperiod CRPS/MAE of one ensemble against one observed path"""
    if observed.shape != (paths.shape[1],):
        raise ShapeMismatch(f"observed path has shape {observed.shape}, ensemble dimension is {paths.shape[1]}")
    return json_safe(score_ensemble(paths, observed))


def band_rows(paths: np.ndarray, scps: Sequence[float], sides: Sequence[str] = SIDES) -> List[Dict[str, Any]]:
    """One row per (side, SCP): band values and the subperiod a band strategy would pick"""
    rows = []
    for side in sides:
        for scp, band in build_bands(paths, scps, side).items():
            rows.append({"side": side, "scp": scp, "chosen_j": band_decision(band),
                         "values": band.values.tolist(), "survivors": int(band.survivors.size)})
    return rows


def trade_paths(paths: np.ndarray, path: PricePath) -> Dict[str, Any]:
    """Majority-vote decision and the naive and crystal-ball benchmarks on one observed path"""
    if paths.shape[1] != N_SUBPERIODS:
        raise ShapeMismatch(f"trading needs {N_SUBPERIODS} subperiods, ensemble has {paths.shape[1]}")
    J = majority_vote(paths)
    best, worst = crystal_ball(path)
    result = {
        "majority": {"chosen_j": J, "revenue": float(path.values[J - 1])},
        "observed_best": observed_best(path),
        "cb_max": best,
        "cb_min": worst,
    }
    for name, decision in naive_decisions(path).items():
        result[name] = {"chosen_j": decision.chosen_j, "revenue": decision.revenue}
    return result


class PathcastController:
    """Main controller class of the pathcast command line"""

    def __init__(self, config: Optional[BacktestConfig] = None, db_path: Optional[str] = None):
        """
        Initialize all components

        Args:
            config: validated configuration, defaults to the published settings
            db_path: run store location, defaults to PATHCAST_DB_PATH or the backend directory
        """
        self.config = config or BacktestConfig()
        self.loader = MarketDataLoader()
        self.db_path = db_path
        self._store: Optional[RunStore] = None

    @property
    def store(self) -> RunStore:
        if self._store is None:
            self._store = RunStore(self.db_path)
            self._store.initialize_database()
        return self._store

    def frame(self, data_path: Optional[str] = None) -> MarketFrame:
        if data_path:
            return self.loader.ingest(data_path)
        return load_frame(self.config)

    def ingest(self, path: str) -> Dict[str, Any]:
        print(f"🔍 Ingesting {path}...")
        frame = self.loader.ingest(path)
        summary = self.loader.summary(frame)
        print(f"✅ {summary['keys']} markets from {summary['first_key']} to {summary['last_key']}")
        if summary["missing_cells"]:
            print(f"⚠️  Missing cells: {summary['missing_cells']}")
        return summary

    def synth(self, out_path: str, days: Optional[int] = None) -> Path:
        print("🧪 Generating synthetic market data...")
        table = generate_synthetic(days, self.config.seed, self.config.synthetic)
        path = write_market_csv(table, out_path)
        print(f"✅ Wrote {len(table)} rows to {path}")
        return path

    def train(self, engine: str, data_path: Optional[str] = None, resume: bool = False) -> Dict[str, Any]:
        print(f"🧠 Training {engine} ensemble ({self.config.train.members} members)...")
        ensemble = train_cgm(self.config, self.frame(data_path), engine, resume=resume)
        print(f"✅ {engine} checkpoint written, trained through {ensemble.train_end}")
        return {"engine": engine, "members": len(ensemble.members), "train_end": ensemble.train_end}

    def backtest(self, data_path: Optional[str] = None, store: bool = True) -> BacktestReport:
        print(f"📈 Backtesting engines {self.config.engines or '(none)'}...")
        report = run_backtest(self.config, self.frame(data_path))
        written = emit_reports(report, self.config.out_dir)
        print(f"✅ Wrote {len(written)} report files to {self.config.out_dir}")

        for row in report.majority_profits().to_dict(orient="records"):
            rtp = "n/a" if row["rtp"] is None or row["rtp"] != row["rtp"] else f"{row['rtp']:.1f}"
            print(f"   {row['strategy']:<22} total {row['total']:>14.2f}   RTP {rtp}")
        if report.skips:
            print(f"⚠️  {len(report.skips)} skipped keys, see skips.csv")
        if report.leakage:
            print(f"❌ {len(report.leakage)} leakage violations")
        if store:
            run_id = self.store.store_run(report, str(self.config.out_dir))
            print(f"📊 Stored as run {run_id}")
        return report

    def observation(self, observed: Optional[str], data_path: Optional[str], key: Optional[str],
                    t0: Optional[float] = None) -> PricePath:
        """Observed path from a comma-separated list or from a market file and key"""
        if observed:
            values = np.array([float(v) for v in observed.split(",")])
            if values.size != N_SUBPERIODS:
                raise ConfigError(f"--observed needs {N_SUBPERIODS} values, got {values.size}")
            return PricePath(key=None, values=values, last_pre_vwap=t0)
        if not key:
            raise ConfigError("Give --observed or --key with market data")
        try:
            market = DeliveryKey.parse(key)
        except ValueError as e:
            raise ConfigError(str(e))
        return self.frame(data_path).price_path(market)

    def score(self, ensemble_path: str, path: PricePath) -> Dict[str, Any]:
        ensemble = load_ensemble(ensemble_path)
        return score_paths(ensemble.paths, path.values)

    def bands(self, ensemble_path: str, sides: Sequence[str]) -> List[Dict[str, Any]]:
        ensemble = load_ensemble(ensemble_path)
        return band_rows(ensemble.paths, self.config.scp_grid, sides)

    def trade(self, ensemble_path: str, path: PricePath) -> Dict[str, Any]:
        ensemble = load_ensemble(ensemble_path)
        return trade_paths(ensemble.paths, path)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration value (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", help="report directory")
    common.add_argument("--engines", help=f"comma-separated subset of {','.join(ENGINES)}, empty for none")
    common.add_argument("--db", help="run store path")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="pathcast", description="Probabilistic intraday price-path backtesting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a market CSV and print its summary")
    p.add_argument("csv")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic market CSV")
    p.add_argument("--days", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-cgm", parents=[common], help="train a generative engine")
    p.add_argument("--loss", choices=["es", "custom"], default="es")
    p.add_argument("--data")
    p.add_argument("--resume", action="store_true", help="keep members already in the checkpoint directory")

    p = sub.add_parser("backtest", parents=[common], help="run the rolling backtest and write reports")
    p.add_argument("--data")
    p.add_argument("--allow-skips", action="store_true", help="exit 0 even when keys were skipped")
    p.add_argument("--no-store", action="store_true", help="do not record the run in the run store")

    for name, helptext in (("score", "score an ensemble file"), ("trade", "trade on an ensemble file")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("ensemble")
        p.add_argument("--observed", help="comma-separated t_1..t_10 prices")
        p.add_argument("--data", help="market CSV holding the observed path")
        p.add_argument("--key", help="market as YYYY-MM-DDTHH")
        p.add_argument("--t0", type=float, help="t_0 price for naive_first")

    p = sub.add_parser("bands", parents=[common], help="prediction bands of an ensemble file")
    p.add_argument("ensemble")
    p.add_argument("--side", choices=["UPPER", "LOWER", "both"], default="both")
    return parser


def configure(args: argparse.Namespace) -> BacktestConfig:
    """Configuration file, --set overrides and the dedicated flags, validated together"""
    config = load_config(args.config, args.set)
    updates: Dict[str, Any] = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out_dir:
        updates["out_dir"] = args.out_dir
    if args.engines is not None:
        updates["engines"] = [e.strip() for e in args.engines.split(",") if e.strip()]
    if not updates:
        return config
    try:
        return BacktestConfig.model_validate({**config.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigError(f"Invalid command-line option: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or log_level()).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = configure(args)
        controller = PathcastController(config, args.db or db_path())

        if args.command == "ingest":
            print(json.dumps(controller.ingest(args.csv), indent=2, default=str))
        elif args.command == "synth":
            controller.synth(args.out, args.days)
        elif args.command == "train-cgm":
            controller.train("CGM_CUSTOM" if args.loss == "custom" else "CGM", args.data, args.resume)
        elif args.command == "backtest":
            report = controller.backtest(args.data, store=not args.no_store)
            if report.leakage:
                return EXIT_LEAKAGE
            if report.skips and not args.allow_skips:
                return EXIT_SKIPS
        elif args.command in ("score", "trade"):
            path = controller.observation(args.observed, args.data, args.key, args.t0)
            result = (controller.score if args.command == "score" else controller.trade)(args.ensemble, path)
            print(json.dumps(result, indent=2, default=float))
        elif args.command == "bands":
            sides = SIDES if args.side == "both" else (args.side,)
            print(json.dumps(controller.bands(args.ensemble, sides), indent=2))
    except (PathcastError, FileNotFoundError) as e:
        logger.error(str(e))
        print(f"❌ {e}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
