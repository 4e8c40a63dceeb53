"""
Profit ledger: per-market revenues of every strategy, crystal-ball bounds,
totals and realized trading potential over a test period
"""

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from exceptions import DegenerateBounds, ReportIoError
from market_data.calendar import DeliveryKey
from market_data.frame import PricePath
from trading.strategies import CB_MAX, CB_MIN, NAIVE_FIRST, TradeDecision, crystal_ball, rtp

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = ["date", "hour", "strategy", "chosen_j", "revenue"]
DOMINANCE_TOL = 1e-9


class ProfitLedger:
    """Collects trade decisions and crystal-ball bounds per market"""

    def __init__(self):
        self.decisions: List[TradeDecision] = []
        self.bounds: Dict[DeliveryKey, tuple] = {}
        self.skips: List[Dict[str, str]] = []

    def record_bounds(self, path: PricePath) -> None:
        best, worst = crystal_ball(path)
        self.bounds[path.key] = (best, worst)

    def add(self, decision: TradeDecision) -> None:
        self.decisions.append(decision)

    def skip(self, key: DeliveryKey, strategy: str, reason: str) -> None:
        self.skips.append({"key": str(key), "strategy": strategy, "reason": reason})

    def merge(self, other: "ProfitLedger") -> None:
        """Fold in the entries of a ledger built over disjoint markets"""
        self.decisions.extend(other.decisions)
        self.bounds.update(other.bounds)
        self.skips.extend(other.skips)

    @property
    def strategies(self) -> List[str]:
        return sorted({d.strategy for d in self.decisions})

    def totals(self) -> Dict[str, Dict[str, Any]]:
        """
        Per strategy: total revenue, crystal-ball totals over the same markets, RTP and market count.
        RTP is None when the bounds coincide
        """
        sums = defaultdict(float)
        cb_max = defaultdict(float)
        cb_min = defaultdict(float)
        counts = defaultdict(int)
        for d in self.decisions:
            best, worst = self.bounds[d.key]
            sums[d.strategy] += d.revenue
            cb_max[d.strategy] += best
            cb_min[d.strategy] += worst
            counts[d.strategy] += 1

        result = {}
        for strategy in sorted(sums):
            try:
                value = rtp(sums[strategy], cb_max[strategy], cb_min[strategy])
            except DegenerateBounds:
                logger.warning(f"RTP undefined for {strategy}: crystal-ball totals coincide")
                value = None
            result[strategy] = {
                "total": sums[strategy],
                "cb_max_total": cb_max[strategy],
                "cb_min_total": cb_min[strategy],
                "rtp": value,
                "markets": counts[strategy],
            }
        return result

    def crystal_ball_totals(self) -> Dict[str, float]:
        if not self.bounds:
            return {CB_MAX: 0.0, CB_MIN: 0.0}
        values = np.array(list(self.bounds.values()))
        return {CB_MAX: float(values[:, 0].sum()), CB_MIN: float(values[:, 1].sum())}

    def dominance_violations(self) -> List[TradeDecision]:
        """Decisions on t_1..t_10 (and the uniform split) earning outside [CB_min, CB_max]"""
        violations = []
        for d in self.decisions:
            if d.strategy == NAIVE_FIRST:
                continue  # filled at t_0, outside the bounded subperiods
            best, worst = self.bounds[d.key]
            if not worst - DOMINANCE_TOL <= d.revenue <= best + DOMINANCE_TOL:
                violations.append(d)
        return violations

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"date": d.key.day.isoformat(), "hour": d.key.hour, "strategy": d.strategy,
             "chosen_j": d.chosen_j, "revenue": d.revenue}
            for d in self.decisions
        ]
        for key, (best, worst) in sorted(self.bounds.items()):
            rows.append({"date": key.day.isoformat(), "hour": key.hour, "strategy": CB_MAX, "chosen_j": -1, "revenue": best})
            rows.append({"date": key.day.isoformat(), "hour": key.hour, "strategy": CB_MIN, "chosen_j": -1, "revenue": worst})
        frame = pd.DataFrame(rows, columns=LEDGER_COLUMNS)
        return frame.sort_values(["date", "hour", "strategy"], kind="stable").reset_index(drop=True)

    def summary(self) -> Dict[str, Any]:
        return {
            "totals": self.totals(),
            "crystal_ball": self.crystal_ball_totals(),
            "markets": len(self.bounds),
            "skipped": len(self.skips),
        }

    def export_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            self.to_frame().to_csv(path, index=False, float_format="%.10g")
        except OSError as e:
            raise ReportIoError(f"Could not write ledger to {path}: {e}")
        return path

    def export_json(self, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
        path = Path(path)
        document = {**self.summary(), **(extra or {})}
        try:
            path.write_text(json.dumps(document, indent=2, sort_keys=True))
        except OSError as e:
            raise ReportIoError(f"Could not write ledger summary to {path}: {e}")
        return path
