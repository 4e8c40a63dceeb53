"""
Selling strategies for 1 MWh per hourly market
Every strategy picks one subperiod J (1..10), except the uniform split, and
earns the observed price there. All argmax ties break toward the later subperiod
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from exceptions import DegenerateBounds, MissingSubperiod
from market_data.calendar import DeliveryKey
from market_data.frame import PricePath

logger = logging.getLogger(__name__)

NAIVE_FIRST = "naive_first"
NAIVE_LAST = "naive_last"
NAIVE_AVG = "naive_avg"
CB_MAX = "cb_max"
CB_MIN = "cb_min"

# chosen_j marker of the uniform split
SPLIT = 0


@dataclass(frozen=True)
class TradeDecision:
    """Executed trade of one strategy in one market"""

    key: Optional[DeliveryKey]
    strategy: str
    chosen_j: int          # 1..10; 0 for the uniform split and the t_0 order
    revenue: float


def argmax_latest(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """0-based index of the maximum; ties resolve to the last index"""
    values = np.asarray(values)
    flipped = np.flip(values, axis=axis)
    return values.shape[axis] - 1 - np.argmax(flipped, axis=axis)


def _paths(ensemble) -> np.ndarray:
    return np.asarray(getattr(ensemble, "paths", ensemble), dtype=float)


def argmax_counts(ensemble) -> np.ndarray:
    """How many trajectories peak at each subperiod, shape (D,)"""
    paths = _paths(ensemble)
    return np.bincount(argmax_latest(paths, axis=1), minlength=paths.shape[1])


def majority_vote(ensemble) -> int:
    """
    Most frequent peak subperiod across trajectories (1-based)

    Ties in frequency go to the higher ensemble-mean price, then to the later subperiod
    """
    paths = _paths(ensemble)
    if paths.ndim != 2 or paths.shape[0] < 1:
        raise ValueError("Majority vote needs at least one trajectory")
    counts = argmax_counts(paths)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        return int(tied[0]) + 1
    means = paths.mean(axis=0)[tied]
    return int(tied[argmax_latest(means)]) + 1


def band_decision(band) -> int:
    """Subperiod with the highest band value (1-based, ties to the later one)"""
    return int(argmax_latest(np.asarray(getattr(band, "values", band)))) + 1


def observed_best(path: Union[PricePath, np.ndarray]) -> int:
    """Realized optimal subperiod J_obs (1-based)"""
    return int(argmax_latest(np.asarray(getattr(path, "values", path)))) + 1


def revenue_at(path: PricePath, j: int) -> float:
    return float(path.values[j - 1])


def trade(path: PricePath, j: int, strategy: str) -> TradeDecision:
    return TradeDecision(key=path.key, strategy=strategy, chosen_j=int(j), revenue=revenue_at(path, j))


def naive_first(path: PricePath) -> TradeDecision:
    """
    Market order in t_0, filled at the t_0 VWAP

    Raises:
        MissingSubperiod: if t_0 is not observed
    """
    if not path.has_t0:
        raise MissingSubperiod("t_0")
    return TradeDecision(key=path.key, strategy=NAIVE_FIRST, chosen_j=0, revenue=float(path.last_pre_vwap))


def naive_last(path: PricePath) -> TradeDecision:
    return trade(path, len(path.values), NAIVE_LAST)


def naive_avg(path: PricePath) -> TradeDecision:
    """Ten trades of 0.1 MWh, one per subperiod"""
    return TradeDecision(key=path.key, strategy=NAIVE_AVG, chosen_j=SPLIT, revenue=float(np.mean(path.values)))


def naive_decisions(path: PricePath) -> Dict[str, TradeDecision]:
    """The three naive benchmarks; naive_first is left out when t_0 is missing"""
    decisions = {NAIVE_LAST: naive_last(path), NAIVE_AVG: naive_avg(path)}
    try:
        decisions[NAIVE_FIRST] = naive_first(path)
    except MissingSubperiod:
        logger.debug(f"{path.key}: no t_0 price, naive_first skipped")
    return decisions


def crystal_ball(path: PricePath) -> Tuple[float, float]:
    """Hindsight (best, worst) revenue over t_1..t_10"""
    values = np.asarray(path.values)
    return float(values.max()), float(values.min())


def rtp(profit_total: float, cb_max_total: float, cb_min_total: float) -> float:
    """
    Realized trading potential in percent

    Raises:
        DegenerateBounds: if the crystal-ball totals coincide
    """
    if not cb_max_total > cb_min_total:
        raise DegenerateBounds(f"CB_max total {cb_max_total} is not above CB_min total {cb_min_total}")
    return (profit_total - cb_min_total) / (cb_max_total - cb_min_total) * 100
