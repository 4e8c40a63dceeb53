"""
MarketFrame: the immutable, hour-aligned table of market series
"""

import hashlib
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from exceptions import MissingSubperiod
from market_data.calendar import N_SUBPERIODS, SUBPERIOD_MINUTES, DeliveryKey

logger = logging.getLogger(__name__)

EXOGENOUS_COLUMNS = ["id3", "da", "load", "load_fc", "wind", "wind_fc"]
VWAP_COLUMNS = [f"vwap_t{j}" for j in range(13)]
CSV_COLUMNS = ["date", "hour"] + EXOGENOUS_COLUMNS + VWAP_COLUMNS
SERIES = EXOGENOUS_COLUMNS + VWAP_COLUMNS + ["sigma"]

# Duration weights used when ID3 is rebuilt from subperiod VWAPs
ID3_WEIGHTS = np.array([SUBPERIOD_MINUTES[j] for j in range(1, 13)], dtype=float)


def path_sigma(vwaps: np.ndarray) -> np.ndarray:
    """Sample standard deviation (n-1) of the t_1..t_12 VWAPs, row-wise"""
    return np.std(vwaps, axis=-1, ddof=1)


def recompute_id3(vwaps: np.ndarray) -> np.ndarray:
    """Duration-weighted mean of the t_1..t_12 VWAPs, row-wise"""
    return np.asarray(vwaps, dtype=float) @ ID3_WEIGHTS / ID3_WEIGHTS.sum()


@dataclass(frozen=True, eq=False)
class PricePath:
    """Observed VWAP path of one hourly market"""

    key: DeliveryKey
    values: np.ndarray                    # t_1..t_10
    last_pre_vwap: Optional[float] = None  # t_0
    tail: Optional[np.ndarray] = None      # t_11, t_12

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_SUBPERIODS,):
            raise ValueError(f"Price path must have {N_SUBPERIODS} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise MissingSubperiod(f"t_{int(np.flatnonzero(~np.isfinite(values))[0]) + 1}")
        object.__setattr__(self, "values", values)

    @property
    def has_t0(self) -> bool:
        return self.last_pre_vwap is not None and np.isfinite(self.last_pre_vwap)


@dataclass(frozen=True, eq=False)
class MarketFrame:
    """
    Series on a dense hourly grid. Rows absent from the source and empty cells
    are NaN and reported by `missing_mask`; nothing is ever zero-filled
    """

    origin: datetime
    values: np.ndarray              # (hours, len(SERIES))
    present: np.ndarray             # (hours,) row existed in the source
    columns: List[str] = field(default_factory=lambda: list(SERIES))

    def __post_init__(self):
        self.values.flags.writeable = False
        self.present.flags.writeable = False
        object.__setattr__(self, "_col", {name: i for i, name in enumerate(self.columns)})

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "MarketFrame":
        """
        Build from a frame indexed by hourly delivery timestamps with the CSV series columns
        """
        if df.empty:
            return cls(origin=datetime(1970, 1, 1), values=np.empty((0, len(SERIES))), present=np.empty(0, dtype=bool))
        index = pd.date_range(df.index.min(), df.index.max(), freq="h")
        dense = df.reindex(index)
        present = index.isin(df.index)
        vwaps = dense[[f"vwap_t{j}" for j in range(1, 13)]].to_numpy(dtype=float)
        dense = dense.assign(sigma=path_sigma(vwaps))
        values = np.ascontiguousarray(dense[SERIES].to_numpy(dtype=float))
        return cls(origin=index[0].to_pydatetime(), values=values, present=np.asarray(present))

    def __len__(self) -> int:
        return int(self.present.sum())

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]

    def col(self, series: str) -> int:
        return self._col[series]

    def position(self, key: DeliveryKey) -> Optional[int]:
        """Row of `key` in the dense grid, None if outside the frame"""
        offset = (key.start - self.origin) / timedelta(hours=1)
        pos = int(offset)
        if pos != offset or pos < 0 or pos >= self.n_hours:
            return None
        return pos

    def key_at(self, pos: int) -> DeliveryKey:
        return DeliveryKey.from_timestamp(self.origin + timedelta(hours=pos))

    def keys(self) -> List[DeliveryKey]:
        return [self.key_at(int(p)) for p in np.flatnonzero(self.present)]

    def days(self) -> List:
        return sorted({key.day for key in self.keys()})

    def cell(self, key: DeliveryKey, series: str) -> float:
        pos = self.position(key)
        if pos is None:
            return float("nan")
        return float(self.values[pos, self.col(series)])

    def series(self, name: str) -> pd.Series:
        index = pd.date_range(self.origin, periods=self.n_hours, freq="h")
        return pd.Series(self.values[:, self.col(name)], index=index, name=name)

    def missing_mask(self) -> pd.DataFrame:
        index = pd.date_range(self.origin, periods=self.n_hours, freq="h")
        return pd.DataFrame(np.isnan(self.values), index=index, columns=self.columns)

    def missing_counts(self) -> Dict[str, int]:
        """Missing cells per series over rows that exist in the source"""
        rows = self.values[self.present]
        return {name: int(np.isnan(rows[:, i]).sum()) for i, name in enumerate(self.columns)}

    def target_matrix(self, positions: np.ndarray) -> np.ndarray:
        """Observed t_1..t_10 paths for grid rows, shape (n, 10)"""
        cols = [self.col(f"vwap_t{j}") for j in range(1, N_SUBPERIODS + 1)]
        return self.values[np.asarray(positions)[:, None], np.asarray(cols)[None, :]]

    def price_path(self, key: DeliveryKey) -> PricePath:
        """
        Observed path of one market

        Raises:
            MissingSubperiod: if the key is outside the frame or t_1..t_10 has a gap
        """
        pos = self.position(key)
        if pos is None or not self.present[pos]:
            raise MissingSubperiod(f"{key} (no row)")
        row = self.values[pos]
        t0 = row[self.col("vwap_t0")]
        tail = np.array([row[self.col("vwap_t11")], row[self.col("vwap_t12")]])
        return PricePath(
            key=key,
            values=self.target_matrix(np.array([pos]))[0],
            last_pre_vwap=None if np.isnan(t0) else float(t0),
            tail=tail,
        )

    def content_hash(self) -> str:
        """SHA-256 over grid origin, presence and values; identical input bytes give identical hashes"""
        digest = hashlib.sha256()
        digest.update(self.origin.isoformat().encode())
        digest.update(",".join(self.columns).encode())
        digest.update(self.present.astype(np.uint8).tobytes())
        digest.update(np.ascontiguousarray(self.values).tobytes())
        return digest.hexdigest()

    def to_dataframe(self) -> pd.DataFrame:
        """Source rows in CSV layout (without the derived sigma column)"""
        index = pd.date_range(self.origin, periods=self.n_hours, freq="h")
        df = pd.DataFrame(self.values, index=index, columns=self.columns)[self.present]
        out = df[EXOGENOUS_COLUMNS + VWAP_COLUMNS].copy()
        out.insert(0, "hour", out.index.hour)
        out.insert(0, "date", out.index.strftime("%Y-%m-%d"))
        return out.reset_index(drop=True)
