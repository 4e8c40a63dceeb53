"""
Rolling-window backtest of the path generators
Each hourly market runs its own chain: daily LEAR refits, quantile fans
calibrated on their out-of-sample forecasts, copula and bootstrap ensembles,
plus ensembles of the pre-trained generator networks. Every ensemble is
scored, turned into bands and traded against the observed path.
"""

import hashlib
import json
import logging
import math
import subprocess
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from backtest.reports import BacktestReport, band_strategy, bias_counts, majority_strategy, OBSERVED
from bands.prediction_bands import SIDES, build_bands
from cgm.ensemble import CgmEnsemble, train_ensemble
from cgm.trainer import prepare_dataset
from config.settings import BacktestConfig, TrainConfig
from exceptions import ConfigError, InsufficientWindow, NonFiniteInput, PathcastError
from market_data.calendar import FORECAST_LEAD, N_SUBPERIODS, DeliveryKey
from market_data.features import LEAR, SCHEMAS, FeatureBuilder, audit_leakage
from market_data.frame import MarketFrame
from market_data.loader import MarketDataLoader
from point_forecast.lear import LearForecaster, predict_matrix
from quantiles.marginal_quantiles import PERCENTILES, MarginalCdf, QuantileFan, QuantileForecaster
from samplers.ensemble_io import export_ensemble
from samplers.path_samplers import (ErrorVectorPool, TrajectoryEnsemble, estimate_copula_from_pits, key_seed,
                                    sample_bootstrap_paths, sample_copula_paths)
from scoring.scoring_rules import score_ensemble
from trading.ledger import ProfitLedger
from trading.strategies import NAIVE_FIRST, band_decision, majority_vote, naive_decisions, observed_best, trade

logger = logging.getLogger(__name__)

LQC_ENGINES = ("BOOTSTRAP", "LQC")
CGM_ENGINES = ("CGM", "CGM_CUSTOM")
# Fewest usable days a LEAR calibration window may hold
MIN_LASSO_ROWS = 10
# Hours after which the whole t_1..t_10 path of a market may feed a forecast
PATH_LAG = 4
VERSION = "1.0.0"


def path_available_at(market: DeliveryKey) -> datetime:
    return market.start + timedelta(hours=PATH_LAG) - FORECAST_LEAD


def day_positions(frame: MarketFrame, days: List[date], hour: int) -> np.ndarray:
    """Grid rows of (day, hour) for every day, -1 outside the frame"""
    positions = np.full(len(days), -1, dtype=int)
    for i, day in enumerate(days):
        pos = frame.position(DeliveryKey(day, hour))
        if pos is not None:
            positions[i] = pos
    return positions


def targets(frame: MarketFrame, positions: np.ndarray) -> np.ndarray:
    """Observed t_1..t_10 for grid rows, NaN for rows outside the frame"""
    inside = positions >= 0
    out = np.full((len(positions), N_SUBPERIODS), np.nan)
    if inside.any():
        out[inside] = frame.target_matrix(positions[inside])
    return out


def consecutive_days(first: date, n: int) -> List[date]:
    return [first + timedelta(days=i) for i in range(n)]


def resolve_test_start(config: BacktestConfig, frame: MarketFrame) -> date:
    """Configured test start, or the first of the last `test_days` days of the frame"""
    days = frame.days()
    if not days:
        raise ConfigError("Market data is empty")
    if config.test_start is not None:
        if config.test_start > days[-1]:
            raise ConfigError(f"Test start {config.test_start} is after the last day {days[-1]}")
        return config.test_start
    if len(days) <= config.test_days:
        raise ConfigError(f"Market data has {len(days)} days, more than test_days={config.test_days} needed")
    return days[-1] - timedelta(days=config.test_days - 1)


@dataclass
class WindowSchedule:
    """
    Day ranges of the rolling chain. lear_days[lead:] are the test days;
    fans start at lear_days[fan_offset]
    """

    test_start: date
    test_days: List[date]
    lear_days: List[date]
    lead: int
    fan_offset: int

    @classmethod
    def derive(cls, config: BacktestConfig, frame: MarketFrame) -> "WindowSchedule":
        windows = config.windows
        test_start = resolve_test_start(config, frame)
        last = frame.days()[-1]
        n_test = min(config.test_days, (last - test_start).days + 1)
        lead = windows.lear_lead
        lear_days = consecutive_days(test_start - timedelta(days=lead), lead + n_test)
        first_needed = lear_days[0] - timedelta(days=windows.lasso)
        if frame.days()[0] > first_needed:
            logger.warning(f"Data starts {frame.days()[0]}, the window chain reaches back to {first_needed}; "
                           f"early calibration windows are short")
        return cls(test_start=test_start, test_days=lear_days[lead:], lear_days=lear_days,
                   lead=lead, fan_offset=lead - windows.copula)


@dataclass(eq=False)
class HourResult:
    """Everything one hourly market stream contributes to the report"""

    hour: int
    scores: List[Dict[str, Any]] = field(default_factory=list)
    ledger: ProfitLedger = field(default_factory=ProfitLedger)
    bias: Dict[str, np.ndarray] = field(default_factory=dict)
    argmax: Dict[str, np.ndarray] = field(default_factory=dict)
    skips: List[Dict[str, Any]] = field(default_factory=list)
    window_violations: List[Dict[str, str]] = field(default_factory=list)

    def skip(self, key: DeliveryKey, engine: str, error: Exception) -> None:
        reason = f"{type(error).__name__}: {error}"
        logger.warning(f"Skipping {key} for {engine}: {reason}")
        self.skips.append({"date": key.day.isoformat(), "hour": key.hour, "engine": engine, "reason": reason})

    def count_argmax(self, source: str, j: int) -> None:
        self.argmax.setdefault(source, np.zeros(N_SUBPERIODS, dtype=int))[j - 1] += 1


@dataclass(eq=False)
class LqcState:
    """Rolling outputs of one hourly market over the schedule's lear_days"""

    point: np.ndarray      # (days, 10) out-of-sample LEAR forecasts
    observed: np.ndarray   # (days, 10)
    fans: np.ndarray       # (days, 10, 99)
    pits: np.ndarray       # (days, 10)


class Backtester:
    """Runs every configured engine over the test period of one market frame"""

    def __init__(self, config: BacktestConfig, frame: MarketFrame,
                 cgm_ensembles: Optional[Dict[str, CgmEnsemble]] = None):
        """
        Initialize the backtester

        Args:
            config: validated backtest configuration
            frame: ingested market data covering calibration and test days
            cgm_ensembles: trained ensembles per CGM engine; loaded from checkpoint_dir when missing
        """
        self.config = config
        self.frame = frame
        self.builder = FeatureBuilder(frame)
        self.schedule = WindowSchedule.derive(config, frame)
        self.cgm_ensembles = dict(cgm_ensembles or {})
        for engine in config.engines:
            if engine in CGM_ENGINES and engine not in self.cgm_ensembles:
                self.cgm_ensembles[engine] = load_cgm_engine(config, frame, engine, self.schedule.test_start)

    # rolling chain

    def rolling_lear(self, hour: int):
        """Out-of-sample LEAR paths for every day of the schedule, NaN where no fit was possible"""
        lasso = self.config.windows.lasso
        days = self.schedule.lear_days
        all_days = consecutive_days(days[0] - timedelta(days=lasso), lasso + len(days))
        positions = day_positions(self.frame, all_days, hour)
        X, missing = self.builder.gather(LEAR, positions)
        x_ok = ~missing.any(axis=1) & (positions >= 0)
        Y = targets(self.frame, positions)
        usable = x_ok & np.all(np.isfinite(Y), axis=1)

        forecaster = LearForecaster(self.config.transform_target, self.config.lambda_grid_points,
                                    SCHEMAS[LEAR].schema_hash)
        point = np.full((len(days), N_SUBPERIODS), np.nan)
        previous = None
        for i in range(len(days)):
            k = i + lasso
            rows = np.arange(k - lasso, k)
            rows = rows[usable[rows]]
            if len(rows) < MIN_LASSO_ROWS or not x_ok[k]:
                logger.debug(f"hour {hour}, {days[i]}: no LEAR fit ({len(rows)} usable days)")
                continue
            try:
                models = forecaster.fit(X[rows], Y[rows], previous)
                forecast = predict_matrix(models, X[k:k + 1])[0]
            except PathcastError as e:
                logger.debug(f"hour {hour}, {days[i]}: LEAR fit failed ({e})")
                continue
            if np.all(np.isfinite(forecast)):
                point[i] = forecast
                previous = models
        return point, Y[lasso:]

    def rolling_fans(self, point: np.ndarray, observed: np.ndarray) -> np.ndarray:
        """Quantile fans (days, 10, 99) from the fan offset on, NaN where the window is too thin"""
        windows = self.config.windows
        forecaster = QuantileForecaster(windows.qr_min_obs)
        ok = np.all(np.isfinite(point), axis=1) & np.all(np.isfinite(observed), axis=1)
        fans = np.full(point.shape + (PERCENTILES.size,), np.nan)
        for i in range(max(self.schedule.fan_offset, 0), len(point)):
            if not np.all(np.isfinite(point[i])):
                continue
            rows = np.arange(max(0, i - windows.qr), i)
            rows = rows[ok[rows]]
            if len(rows) < windows.qr_min_obs:
                continue
            try:
                coefficients = forecaster.fit(point[rows].T, observed[rows].T)
            except PathcastError as e:
                logger.debug(f"Quantile fit failed: {e}")
                continue
            fans[i] = forecaster.predict(coefficients, point[i])
        return fans

    @staticmethod
    def pits(fans: np.ndarray, observed: np.ndarray) -> np.ndarray:
        out = np.full(observed.shape, np.nan)
        for i in range(len(observed)):
            if not (np.all(np.isfinite(fans[i])) and np.all(np.isfinite(observed[i]))):
                continue
            out[i] = [MarginalCdf(QuantileFan(fans[i, j], j + 1))(observed[i, j]) for j in range(N_SUBPERIODS)]
        return out

    def lqc_state(self, hour: int) -> LqcState:
        point, observed = self.rolling_lear(hour)
        if "LQC" in self.config.engines:
            fans = self.rolling_fans(point, observed)
            pits = self.pits(fans, observed)
        else:
            fans = np.full(point.shape + (PERCENTILES.size,), np.nan)
            pits = np.full(point.shape, np.nan)
        return LqcState(point=point, observed=observed, fans=fans, pits=pits)

    # ensembles

    def sample(self, engine: str, key: DeliveryKey, index: int, state: Optional[LqcState]) -> TrajectoryEnsemble:
        """
        Ensemble of one engine for one test market

        Args:
            engine: BOOTSTRAP, LQC, CGM or CGM_CUSTOM
            key: test market
            index: position of the key's day in the schedule's lear_days
            state: rolling outputs of the key's hour (LEAR-based engines only)
        """
        cfg = self.config
        seed = key_seed(cfg.seed, key, engine)
        if engine == "BOOTSTRAP":
            if not np.all(np.isfinite(state.point[index])):
                raise NonFiniteInput(f"No point forecast for {key}")
            rows = slice(index - cfg.windows.bootstrap, index)
            pool = ErrorVectorPool.from_forecasts(state.point[rows], state.observed[rows], cfg.bootstrap_error_sign)
            return sample_bootstrap_paths(state.point[index], pool, cfg.ensemble_size, seed, key)
        if engine == "LQC":
            if not np.all(np.isfinite(state.fans[index])):
                raise NonFiniteInput(f"No quantile fan for {key}")
            spec = estimate_copula_from_pits(state.pits[index - cfg.windows.copula:index],
                                             window_id=f"{key}/{cfg.windows.copula}d")
            cdfs = [MarginalCdf(QuantileFan(state.fans[index, j], j + 1)) for j in range(N_SUBPERIODS)]
            return sample_copula_paths(spec, cdfs, cfg.ensemble_size, seed, key)
        ensemble = self.cgm_ensembles[engine]
        input1, input2, input3 = self.builder.build_cgm_inputs(key)
        inputs = {"input1": input1.values[None, :], "input2": input2.values[None, :],
                  "input3": input3.values[None, :], "weekday": np.array([key.weekday])}
        per_member = max(1, math.ceil(cfg.ensemble_size / len(ensemble.members)))
        return ensemble.sample(inputs, seed, key, samples_per_member=per_member)

    def latest_market(self, engine: str, key: DeliveryKey) -> Optional[DeliveryKey]:
        """Latest market whose path an engine's calibration used for `key`"""
        if engine in LQC_ENGINES:
            return key.shifted(-24)
        train_end = self.cgm_ensembles[engine].train_end
        return DeliveryKey.from_timestamp(datetime.fromisoformat(train_end)) if train_end else None

    def check_window(self, engine: str, key: DeliveryKey, result: HourResult) -> None:
        latest = self.latest_market(engine, key)
        if latest is not None and path_available_at(latest) > key.forecast_origin:
            result.window_violations.append({
                "key": str(key), "schema": engine, "cell": f"{latest}:path",
                "available_at": path_available_at(latest).isoformat(),
                "forecast_origin": key.forecast_origin.isoformat(),
            })

    # evaluation

    def evaluate(self, engine: str, ensemble: TrajectoryEnsemble, path, result: HourResult) -> None:
        record = score_ensemble(ensemble.paths, path.values, path.key)
        result.scores.append({"engine": engine, **record})
        counts = bias_counts(ensemble.paths, path.values)
        result.bias[engine] = result.bias.get(engine, 0) + counts

        J = majority_vote(ensemble)
        result.count_argmax(engine, J)
        result.ledger.add(trade(path, J, majority_strategy(engine)))
        for side in SIDES:
            for scp, band in build_bands(ensemble, self.config.scp_grid, side).items():
                result.ledger.add(trade(path, band_decision(band), band_strategy(engine, side, scp)))

        if self.config.export_ensembles:
            target = Path(self.config.out_dir) / "ensembles" / engine / f"{path.key.day.isoformat()}_{path.key.hour:02d}.bin"
            target.parent.mkdir(parents=True, exist_ok=True)
            export_ensemble(ensemble, target)

    def run_hour(self, hour: int) -> HourResult:
        """Whole test period of one hourly market"""
        started = time.time()
        result = HourResult(hour=hour)
        engines = self.config.engines
        state = self.lqc_state(hour) if any(e in LQC_ENGINES for e in engines) else None

        for offset, day in enumerate(self.schedule.test_days):
            key = DeliveryKey(day, hour)
            index = self.schedule.lead + offset
            try:
                path = self.frame.price_path(key)
            except PathcastError as e:
                result.skip(key, "ALL", e)
                continue
            result.ledger.record_bounds(path)
            naive = naive_decisions(path)
            for decision in naive.values():
                result.ledger.add(decision)
            if NAIVE_FIRST not in naive:
                result.skip(key, NAIVE_FIRST, NonFiniteInput("no t_0 price"))
            result.count_argmax(OBSERVED, observed_best(path))

            for engine in engines:
                self.check_window(engine, key, result)
                try:
                    ensemble = self.sample(engine, key, index, state)
                except PathcastError as e:
                    result.skip(key, engine, e)
                    continue
                self.evaluate(engine, ensemble, path, result)

        logger.info(f"Hour {hour:02d} done in {time.time() - started:.1f}s "
                    f"({len(result.scores)} ensembles, {len(result.skips)} skips)")
        return result

    def run(self) -> BacktestReport:
        """
        Run all 24 hourly streams and assemble the report

        Returns:
            BacktestReport with scores, ledger, plot data, skip log and leakage findings
        """
        started = time.time()
        cfg = self.config
        logger.info(f"Backtest {self.schedule.test_days[0]}..{self.schedule.test_days[-1]} "
                    f"({len(self.schedule.test_days)} days), engines {cfg.engines}")
        for engine in cfg.engines:
            if engine in self.cgm_ensembles:
                self.cgm_ensembles[engine].check_trained()

        results = Parallel(n_jobs=cfg.n_jobs)(delayed(self.run_hour)(hour) for hour in range(24))

        ledger = ProfitLedger()
        scores, skips, bias, argmax, window_violations = [], [], {}, {}, []
        for result in results:
            ledger.merge(result.ledger)
            scores.extend(result.scores)
            skips.extend(result.skips)
            window_violations.extend(result.window_violations)
            for engine, counts in result.bias.items():
                bias[engine] = bias.get(engine, 0) + counts
            for source, counts in result.argmax.items():
                argmax[source] = argmax.get(source, 0) + counts

        test_keys = [DeliveryKey(day, hour) for day in self.schedule.test_days for hour in range(24)]
        leakage = audit_leakage(self.frame, test_keys) + window_violations
        if leakage:
            logger.error(f"{len(leakage)} leakage violations")

        score_frame = pd.DataFrame(scores)
        if not score_frame.empty:
            score_frame = score_frame.sort_values(["engine", "date", "hour"], kind="stable").reset_index(drop=True)
        else:
            score_frame = pd.DataFrame(columns=["engine", "date", "hour", "peak_flag", "es", "dss", "vs1", "vs05"])
        skips.sort(key=lambda s: (s["date"], s["hour"], s["engine"]))

        return BacktestReport(
            engines=list(cfg.engines),
            scores=score_frame,
            ledger=ledger,
            scp_grid=list(cfg.scp_grid),
            bias=bias,
            argmax=argmax,
            skips=skips,
            leakage=leakage,
            metadata={
                "config_hash": cfg.config_hash(),
                "data_hash": self.frame.content_hash(),
                "version": version_string(),
                "test_start": self.schedule.test_start.isoformat(),
                "test_days": len(self.schedule.test_days),
                "wall_time_s": round(time.time() - started, 3),
                "created": datetime.now().isoformat(timespec="seconds"),
            },
        )


def version_string() -> str:
    """Package version plus the git commit when run from a checkout"""
    try:
        commit = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                                timeout=5, cwd=Path(__file__).parent).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        commit = ""
    return f"{VERSION}+{commit}" if commit else VERSION


def load_frame(config: BacktestConfig) -> MarketFrame:
    if not config.data_path:
        raise ConfigError("data_path is not set")
    return MarketDataLoader().ingest(config.data_path)


# CGM training

def cgm_train_config(config: BacktestConfig, engine: str) -> TrainConfig:
    """Training settings of an engine: energy score for CGM, the custom loss for CGM_CUSTOM"""
    if engine == "CGM_CUSTOM":
        return config.train.model_copy(update={"loss": "custom", "omega": config.custom_omega})
    if engine == "CGM":
        return config.train.model_copy(update={"loss": "es"})
    raise ValueError(f"{engine} is not a generative engine")


def cgm_checkpoint_hash(config: BacktestConfig, frame: MarketFrame, engine: str, test_start: date) -> str:
    relevant = {
        "cgm": config.cgm_hash(),
        "engine": engine,
        "train": cgm_train_config(config, engine).model_dump(mode="json"),
        "test_start": test_start.isoformat(),
        "data": frame.content_hash(),
    }
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()


def cgm_directory(config: BacktestConfig, engine: str) -> Path:
    return Path(config.checkpoint_dir) / engine


def cgm_training_positions(frame: MarketFrame, test_start: date, days: int) -> np.ndarray:
    """
    Grid rows of the fixed training window: `days` x 24 markets ending with the
    last market whose path is public at the first test forecast origin
    """
    last = DeliveryKey(test_start, 0).shifted(-PATH_LAG)
    end = min(int((last.start - frame.origin) // timedelta(hours=1)), frame.n_hours - 1)
    positions = np.arange(max(0, end - days * 24 + 1), end + 1)
    return positions[frame.present[positions]]


def train_cgm(config: BacktestConfig, frame: MarketFrame, engine: str = "CGM", resume: bool = False,
              n_jobs: Optional[int] = None) -> CgmEnsemble:
    """
    Train the ensemble of one generative engine on the window before the test start

    Args:
        config: backtest configuration
        frame: market data
        engine: CGM (energy score) or CGM_CUSTOM (custom loss)
        resume: keep members already present in the checkpoint directory
        n_jobs: parallel member trainings, defaults to config.n_jobs
    """
    test_start = resolve_test_start(config, frame)
    positions = cgm_training_positions(frame, test_start, config.windows.cgm)
    if len(positions) == 0:
        raise InsufficientWindow(0, config.windows.cgm)
    train = cgm_train_config(config, engine)
    dataset, scalers = prepare_dataset(FeatureBuilder(frame), positions)
    if len(dataset) == 0:
        raise InsufficientWindow(0, config.windows.cgm)
    train_end = frame.key_at(int(positions[-1])).start.isoformat()
    logger.info(f"Training {engine} on {len(dataset)} markets up to {train_end}")
    return train_ensemble(
        dataset, scalers, train, config.architecture,
        directory=cgm_directory(config, engine),
        config_hash=cgm_checkpoint_hash(config, frame, engine, test_start),
        resume=resume,
        n_jobs=config.n_jobs if n_jobs is None else n_jobs,
        generator_tag=engine,
        train_end=train_end,
    )


def load_cgm_engine(config: BacktestConfig, frame: MarketFrame, engine: str,
                    test_start: Optional[date] = None) -> CgmEnsemble:
    """Trained ensemble of `engine` from its checkpoint directory, checked against this configuration"""
    test_start = test_start or resolve_test_start(config, frame)
    directory = cgm_directory(config, engine)
    if not directory.exists():
        raise ConfigError(f"No checkpoint for {engine} in {directory}; run train-cgm first")
    return CgmEnsemble.load(directory, cgm_checkpoint_hash(config, frame, engine, test_start))


def run_backtest(config: BacktestConfig, frame: Optional[MarketFrame] = None,
                 cgm_ensembles: Optional[Dict[str, CgmEnsemble]] = None) -> BacktestReport:
    """Backtest on `frame` (or the configured data file)"""
    frame = frame if frame is not None else load_frame(config)
    return Backtester(config, frame, cgm_ensembles).run()
