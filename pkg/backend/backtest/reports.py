"""
Backtest report: score tables, profit tables and plot data written as CSV,
plus run.json with a deterministic summary and the run metadata
"""

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from bands.prediction_bands import SIDES
from exceptions import ReportIoError
from market_data.calendar import N_SUBPERIODS
from trading.ledger import ProfitLedger
from trading.strategies import CB_MAX, CB_MIN, NAIVE_AVG, NAIVE_FIRST, NAIVE_LAST

logger = logging.getLogger(__name__)

SCORE_METRICS = ["es", "dss", "vs1", "vs05"]
SCORE_COLUMNS = (["engine", "date", "hour", "peak_flag"] + SCORE_METRICS
                 + [f"crps_t{j}" for j in range(1, N_SUBPERIODS + 1)]
                 + [f"mae_t{j}" for j in range(1, N_SUBPERIODS + 1)])
TABLE_COLUMNS = ["engine", "peak_flag", "n_keys"] + SCORE_METRICS + ["status"]
SKIP_COLUMNS = ["date", "hour", "engine", "reason"]
OBSERVED = "OBSERVED"
NAIVE_STRATEGIES = (NAIVE_FIRST, NAIVE_LAST, NAIVE_AVG)
FLOAT_FORMAT = "%.10g"

# Fixed bin grid of the bias histogram in EUR/MWh; values outside land in the edge bins
BIAS_EDGES = np.linspace(-50.0, 50.0, 51)

_BAND = re.compile(r"^(?P<engine>[A-Z_]+):band_(?P<side>upper|lower):(?P<scp>[0-9.]+)$")


def majority_strategy(engine: str) -> str:
    return f"{engine}:majority"


def band_strategy(engine: str, side: str, scp: float) -> str:
    return f"{engine}:band_{side.lower()}:{scp:.2f}"


def parse_band_strategy(name: str) -> Optional[Dict[str, Any]]:
    match = _BAND.match(name)
    if match is None:
        return None
    return {"engine": match["engine"], "side": match["side"].upper(), "scp": float(match["scp"])}


def bias_counts(paths: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Histogram of sample minus observation per subperiod, shape (D, bins)"""
    diff = np.clip(paths - observed[None, :], BIAS_EDGES[0], BIAS_EDGES[-1])
    return np.stack([np.histogram(diff[:, j], bins=BIAS_EDGES)[0] for j in range(diff.shape[1])])


def json_safe(value):
    """JSON-safe scalars: NaN and inf become null, numpy types become Python ones"""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass(eq=False)
class BacktestReport:
    """Everything a backtest produced"""

    engines: List[str]
    scores: pd.DataFrame
    ledger: ProfitLedger
    scp_grid: List[float]
    bias: Dict[str, np.ndarray] = field(default_factory=dict)
    argmax: Dict[str, np.ndarray] = field(default_factory=dict)
    skips: List[Dict[str, Any]] = field(default_factory=list)
    leakage: List[Dict[str, str]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def score_table(self) -> pd.DataFrame:
        """Mean scores per engine and peak flag; engines without scores are marked skipped"""
        rows = []
        for engine in self.engines:
            for flag in ("on", "off"):
                subset = self.scores[(self.scores["engine"] == engine) & (self.scores["peak_flag"] == flag)]
                row = {"engine": engine, "peak_flag": flag, "n_keys": len(subset)}
                if subset.empty:
                    row.update({m: float("nan") for m in SCORE_METRICS}, status="skipped")
                else:
                    row.update({m: float(subset[m].mean()) for m in SCORE_METRICS}, status="ok")
                rows.append(row)
        return pd.DataFrame(rows, columns=TABLE_COLUMNS)

    def hourly_scores(self) -> pd.DataFrame:
        if self.scores.empty:
            return pd.DataFrame(columns=["engine", "hour"] + SCORE_METRICS)
        return self.scores.groupby(["engine", "hour"], sort=True)[SCORE_METRICS].mean().reset_index()

    def subperiod_scores(self) -> pd.DataFrame:
        """Mean MAE of the median path and mean CRPS per engine and subperiod"""
        rows = []
        for engine in self.engines:
            subset = self.scores[self.scores["engine"] == engine]
            for j in range(1, N_SUBPERIODS + 1):
                rows.append({
                    "engine": engine,
                    "subperiod": j,
                    "mae": float(subset[f"mae_t{j}"].mean()) if len(subset) else float("nan"),
                    "crps": float(subset[f"crps_t{j}"].mean()) if len(subset) else float("nan"),
                })
        return pd.DataFrame(rows, columns=["engine", "subperiod", "mae", "crps"])

    def bias_table(self) -> pd.DataFrame:
        rows = []
        for engine in self.engines:
            counts = self.bias.get(engine)
            if counts is None:
                continue
            for j in range(counts.shape[0]):
                for b in range(counts.shape[1]):
                    rows.append({"engine": engine, "subperiod": j + 1, "bin_left": BIAS_EDGES[b],
                                 "bin_right": BIAS_EDGES[b + 1], "count": int(counts[j, b])})
        return pd.DataFrame(rows, columns=["engine", "subperiod", "bin_left", "bin_right", "count"])

    def argmax_table(self) -> pd.DataFrame:
        """Chosen subperiod frequencies of every engine's majority vote and of the observed best"""
        rows = []
        for source in [OBSERVED] + [e for e in self.engines if e in self.argmax]:
            counts = self.argmax.get(source, np.zeros(N_SUBPERIODS, dtype=int))
            total = counts.sum()
            for j in range(N_SUBPERIODS):
                rows.append({"source": source, "subperiod": j + 1, "count": int(counts[j]),
                             "frequency": float(counts[j] / total) if total else 0.0})
        return pd.DataFrame(rows, columns=["source", "subperiod", "count", "frequency"])

    def majority_profits(self) -> pd.DataFrame:
        """Totals and RTP of the naive strategies, the majority votes and the crystal balls"""
        totals = self.ledger.totals()
        rows = []
        for name in list(NAIVE_STRATEGIES) + [majority_strategy(e) for e in self.engines]:
            if name in totals:
                t = totals[name]
                rows.append({"strategy": name, "total": t["total"], "rtp": t["rtp"], "markets": t["markets"]})
        cb = self.ledger.crystal_ball_totals()
        markets = len(self.ledger.bounds)
        degenerate = cb[CB_MAX] == cb[CB_MIN]
        rows.append({"strategy": CB_MAX, "total": cb[CB_MAX], "rtp": None if degenerate else 100.0, "markets": markets})
        rows.append({"strategy": CB_MIN, "total": cb[CB_MIN], "rtp": None if degenerate else 0.0, "markets": markets})
        return pd.DataFrame(rows, columns=["strategy", "total", "rtp", "markets"])

    def band_profits(self) -> pd.DataFrame:
        """One row per (engine, side, SCP)"""
        rows = []
        for name, t in self.ledger.totals().items():
            parsed = parse_band_strategy(name)
            if parsed is not None:
                rows.append({**parsed, "total": t["total"], "rtp": t["rtp"], "markets": t["markets"]})
        frame = pd.DataFrame(rows, columns=["engine", "side", "scp", "total", "rtp", "markets"])
        if frame.empty:
            return frame
        order = {side: i for i, side in enumerate(SIDES)}
        frame["_side"] = frame["side"].map(order)
        return frame.sort_values(["engine", "_side", "scp"]).drop(columns="_side").reset_index(drop=True)

    def skip_table(self) -> pd.DataFrame:
        return pd.DataFrame(self.skips, columns=SKIP_COLUMNS)

    def summary(self) -> Dict[str, Any]:
        """Deterministic body of run.json"""
        return json_safe({
            "engines": list(self.engines),
            "scored_keys": {e: int((self.scores["engine"] == e).sum()) for e in self.engines},
            "scores_table": self.score_table().to_dict(orient="records"),
            "profits": self.ledger.summary(),
            "dominance_violations": len(self.ledger.dominance_violations()),
            "skipped_keys": len(self.skips),
            "leakage_violations": len(self.leakage),
            "scp_grid": list(self.scp_grid),
        })


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def emit_reports(report: BacktestReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write every report file into `out_dir`

    Returns:
        file name -> path

    Raises:
        ReportIoError: if a file cannot be written
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        scores = report.scores.reindex(columns=SCORE_COLUMNS)
        written = {
            "scores.csv": _write_csv(scores, out_dir / "scores.csv"),
            "scores_table.csv": _write_csv(report.score_table(), out_dir / "scores_table.csv"),
            "scores_hourly.csv": _write_csv(report.hourly_scores(), out_dir / "scores_hourly.csv"),
            "scores_subperiod.csv": _write_csv(report.subperiod_scores(), out_dir / "scores_subperiod.csv"),
            "bias_hist.csv": _write_csv(report.bias_table(), out_dir / "bias_hist.csv"),
            "ledger.csv": report.ledger.export_csv(out_dir / "ledger.csv"),
            "profits_majority.csv": _write_csv(report.majority_profits(), out_dir / "profits_majority.csv"),
            "profits_bands.csv": _write_csv(report.band_profits(), out_dir / "profits_bands.csv"),
            "argmax_hist.csv": _write_csv(report.argmax_table(), out_dir / "argmax_hist.csv"),
            "skips.csv": _write_csv(report.skip_table(), out_dir / "skips.csv"),
        }
        run_json = out_dir / "run.json"
        document = {"summary": report.summary(), "metadata": json_safe(report.metadata)}
        run_json.write_text(json.dumps(document, indent=2, sort_keys=True))
        written["run.json"] = run_json
    except OSError as e:
        raise ReportIoError(f"Could not write reports to {out_dir}: {e}")
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written
