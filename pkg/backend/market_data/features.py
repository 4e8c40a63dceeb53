"""
Feature construction for the LEAR models and the generative network
Every feature is a (series, lag) cell read relative to the target market,
so a schema can be gathered for one key or for a whole batch of grid rows
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import InsufficientHistory, LeakageViolation
from market_data.calendar import FORECAST_LEAD, N_SUBPERIODS, DeliveryKey, availability_time, min_lag
from market_data.frame import EXOGENOUS_COLUMNS, VWAP_COLUMNS, MarketFrame

logger = logging.getLogger(__name__)

LEAR = "LEAR"
INPUT1 = "INPUT1"
INPUT2 = "INPUT2"
INPUT3 = "INPUT3"

# Variables of INPUT1, in network order
CGM_VARIABLES = EXOGENOUS_COLUMNS + VWAP_COLUMNS + ["sigma"]
CGM_LAGS = range(4, 169)

# Days used as the period of the day-of-year encoding
YEAR_LENGTH = 365.25


@dataclass(frozen=True)
class CellSpec:
    """One feature: `series` of the market `lag` hours before the target"""

    series: str
    lag: int

    @property
    def name(self) -> str:
        return f"{self.series}[h-{self.lag}]"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered cell list plus calendar features appended at the end"""

    schema_id: str
    cells: Tuple[CellSpec, ...]
    calendar: Tuple[str, ...] = ()

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.cells] + list(self.calendar)

    def __len__(self) -> int:
        return len(self.cells) + len(self.calendar)

    @property
    def schema_hash(self) -> str:
        return hashlib.sha256(f"{self.schema_id}:{','.join(self.names)}".encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Named, ordered feature values of one market"""

    schema_id: str
    names: List[str]
    values: np.ndarray
    schema_hash: str
    weekday: Optional[int] = None

    def __len__(self) -> int:
        return len(self.values)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _cells(series: Sequence[str], lags: Sequence[int]) -> Tuple[CellSpec, ...]:
    """Variable-major cell list"""
    return tuple(CellSpec(s, lag) for s in series for lag in lags)


def lear_schema() -> FeatureSchema:
    cells = (
        _cells(["id3"], range(4, 25))
        + _cells(["da"], range(0, 25))
        + _cells(["wind_fc", "load_fc"], range(0, 25))
        + _cells(["wind", "load"], [4, 24])
        + _cells(["vwap_t0"], [0])
    )
    return FeatureSchema(LEAR, cells)


def input1_schema() -> FeatureSchema:
    return FeatureSchema(INPUT1, _cells(CGM_VARIABLES, CGM_LAGS))


def input2_schema() -> FeatureSchema:
    return FeatureSchema(INPUT2, _cells(["sigma"], CGM_LAGS))


def input3_schema() -> FeatureSchema:
    cells = (
        _cells(CGM_VARIABLES, [4])
        + _cells(["da", "load_fc", "wind_fc", "vwap_t0"], range(0, 4))
        + _cells([f"vwap_t{j}" for j in range(9, 13)], [2])
        + _cells([f"vwap_t{j}" for j in range(5, 13)], [3])
    )
    return FeatureSchema(INPUT3, cells, calendar=("sin_doy", "cos_doy", "sin_hour", "cos_hour"))


SCHEMAS: Dict[str, FeatureSchema] = {
    LEAR: lear_schema(),
    INPUT1: input1_schema(),
    INPUT2: input2_schema(),
    INPUT3: input3_schema(),
}


def exposure_violations(schema: FeatureSchema, key: DeliveryKey) -> List[str]:
    """Cells of `schema` whose availability time is after the forecast origin of `key`"""
    late = []
    for cell in schema.cells:
        market = key.shifted(-cell.lag)
        if availability_time(market, cell.series) > key.forecast_origin:
            late.append(f"{market}:{cell.series}")
    return late


def calendar_features(stamps: pd.DatetimeIndex) -> np.ndarray:
    """sin/cos of day-of-year (period 365.25) and of hour-of-day, shape (n, 4)"""
    doy = 2 * np.pi * stamps.dayofyear.to_numpy(dtype=float) / YEAR_LENGTH
    hour = 2 * np.pi * stamps.hour.to_numpy(dtype=float) / 24
    return np.column_stack([np.sin(doy), np.cos(doy), np.sin(hour), np.cos(hour)])


class FeatureBuilder:
    """Gathers feature schemas from a MarketFrame; pure and safe to share between threads"""

    def __init__(self, frame: MarketFrame):
        """
        Initialize the builder

        Args:
            frame: ingested market data
        """
        self.frame = frame
        self._index = {}
        for schema in SCHEMAS.values():
            cols = np.array([frame.col(c.series) for c in schema.cells], dtype=int)
            lags = np.array([c.lag for c in schema.cells], dtype=int)
            self._index[schema.schema_id] = (cols, lags)

    def build_lear_features(self, key: DeliveryKey, j: int = 1) -> FeatureVector:
        """
        Regressors of the LEAR model for subperiod j (identical for every j)

        Raises:
            InsufficientHistory: if any required cell is missing
        """
        if not 1 <= j <= N_SUBPERIODS:
            raise ValueError(f"Subperiod index must be in 1..{N_SUBPERIODS}, got {j}")
        return self._build(SCHEMAS[LEAR], key)

    def build_cgm_inputs(self, key: DeliveryKey) -> Tuple[FeatureVector, FeatureVector, FeatureVector]:
        """
        INPUT1, INPUT2 and INPUT3 (with weekday attached) for one market

        Raises:
            LeakageViolation: if a requested cell is published after the forecast origin
            InsufficientHistory: if any required cell is missing
        """
        return tuple(self._build(SCHEMAS[s], key) for s in (INPUT1, INPUT2, INPUT3))

    def _build(self, schema: FeatureSchema, key: DeliveryKey) -> FeatureVector:
        late = exposure_violations(schema, key)
        if late:
            raise LeakageViolation(late)
        pos = self.frame.position(key)
        if pos is None:
            raise InsufficientHistory([f"{key} (outside frame)"])
        values, missing = self.gather(schema.schema_id, np.array([pos]))
        if missing[0].any():
            names = [schema.cells[i] for i in np.flatnonzero(missing[0])]
            raise InsufficientHistory(f"{key.shifted(-c.lag)}:{c.series}" for c in names)
        return FeatureVector(
            schema_id=schema.schema_id,
            names=schema.names,
            values=values[0],
            schema_hash=schema.schema_hash,
            weekday=key.weekday if schema.schema_id == INPUT3 else None,
        )

    def gather(self, schema_id: str, positions: np.ndarray, dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
        """
        Feature matrix for many grid rows at once

        Args:
            schema_id: one of LEAR, INPUT1, INPUT2, INPUT3
            positions: grid rows of the target markets
            dtype: output dtype (the network uses float32)

        Returns:
            (values (n, p), missing mask over the cell columns (n, cells))
        """
        schema = SCHEMAS[schema_id]
        cols, lags = self._index[schema_id]
        positions = np.asarray(positions, dtype=int)
        rows = positions[:, None] - lags[None, :]
        outside = rows < 0
        cells = self.frame.values[np.where(outside, 0, rows), cols[None, :]]
        cells = np.where(outside, np.nan, cells)
        missing = np.isnan(cells)
        if schema.calendar:
            stamps = pd.DatetimeIndex(pd.Timestamp(self.frame.origin) + pd.to_timedelta(positions, unit="h"))
            cells = np.hstack([cells, calendar_features(stamps)])
        return cells.astype(dtype, copy=False), missing

    def weekdays(self, positions: np.ndarray) -> np.ndarray:
        """ISO weekday (1-7) of each grid row"""
        stamps = pd.DatetimeIndex(pd.Timestamp(self.frame.origin) + pd.to_timedelta(np.asarray(positions), unit="h"))
        return stamps.dayofweek.to_numpy() + 1

    def cgm_batch(self, positions: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """
        All network inputs for many grid rows

        Returns:
            (inputs dict with input1/input2/input3/weekday, mask of rows with complete inputs)
        """
        inputs, complete = {}, np.ones(len(positions), dtype=bool)
        for schema_id in (INPUT1, INPUT2, INPUT3):
            values, missing = self.gather(schema_id, positions, dtype=np.float32)
            inputs[schema_id.lower()] = values
            complete &= ~missing.any(axis=1)
        inputs["weekday"] = self.weekdays(positions)
        return inputs, complete


def audit_leakage(frame: MarketFrame, keys: Optional[Sequence[DeliveryKey]] = None) -> List[Dict[str, str]]:
    """
    Enumerate every cell the feature builders request for `keys` and report those
    published after the key's forecast origin

    Returns:
        list of violations (key, schema, cell, available_at, forecast_origin); empty when clean
    """
    keys = frame.keys() if keys is None else list(keys)
    violations = []
    if not keys:
        return violations
    starts = pd.DatetimeIndex([k.start for k in keys])
    origins = starts - FORECAST_LEAD
    for schema in SCHEMAS.values():
        for cell in schema.cells:
            # availability of the same cell for every key at once
            available = starts - pd.Timedelta(hours=cell.lag) + pd.Timedelta(hours=min_lag(cell.series)) - FORECAST_LEAD
            for i in np.flatnonzero(available > origins):
                key = keys[i]
                violations.append({
                    "key": str(key),
                    "schema": schema.schema_id,
                    "cell": f"{key.shifted(-cell.lag)}:{cell.series}",
                    "available_at": available[i].isoformat(),
                    "forecast_origin": key.forecast_origin.isoformat(),
                })
    if violations:
        logger.warning(f"Leakage audit found {len(violations)} violations over {len(keys)} keys")
    else:
        logger.info(f"Leakage audit clean over {len(keys)} keys")
    return violations

