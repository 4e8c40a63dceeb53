"""
Market data loader for pathcast
Parses the market CSV into a MarketFrame, validating every row
"""

import io
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import pytz

from exceptions import DuplicateKey, MalformedRow, NonMonotoneTimestamps
from market_data.calendar import DeliveryKey
from market_data.frame import CSV_COLUMNS, EXOGENOUS_COLUMNS, VWAP_COLUMNS, MarketFrame

logger = logging.getLogger(__name__)

CsvSource = Union[str, os.PathLike, bytes, BinaryIO]


@dataclass
class SchemaConfig:
    """How the CSV is laid out and which clock its dates use"""

    date_column: str = "date"
    hour_column: str = "hour"
    date_format: str = "%Y-%m-%d"
    timezone: Optional[str] = None  # None: naive delivery clock, no DST validation
    value_columns: List[str] = field(default_factory=lambda: EXOGENOUS_COLUMNS + VWAP_COLUMNS)


class MarketDataLoader:
    """Loads market CSV files into MarketFrames"""

    def __init__(self, schema: Optional[SchemaConfig] = None):
        """
        Initialize the loader

        Args:
            schema: CSV layout; defaults to the documented column set
        """
        self.schema = schema or SchemaConfig()

    def ingest(self, source: CsvSource) -> MarketFrame:
        """
        Parse a CSV source into a MarketFrame

        Args:
            source: path, raw bytes or binary stream of a UTF-8 CSV with header row

        Returns:
            MarketFrame aligned on delivery keys, empty cells kept as missing

        Raises:
            MalformedRow: unparsable cell or missing header column (line number reported)
            DuplicateKey: two rows for the same (date, hour)
            NonMonotoneTimestamps: rows out of delivery order
        """
        raw = self._read_bytes(source)
        try:
            table = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False, encoding="utf-8")
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise MalformedRow(1, f"unreadable CSV: {e}")
        except pd.errors.EmptyDataError:
            raise MalformedRow(1, "empty file, header row is mandatory")

        schema = self.schema
        required = [schema.date_column, schema.hour_column] + schema.value_columns
        absent = [c for c in required if c not in table.columns]
        if absent:
            raise MalformedRow(1, f"header is missing columns {absent}")

        # data lines start after the header
        lines = np.arange(len(table)) + 2

        dates = pd.to_datetime(table[schema.date_column].str.strip(), format=schema.date_format, errors="coerce")
        self._raise_first(dates.isna().to_numpy(), lines, "unparsable date")

        hours = pd.to_numeric(table[schema.hour_column].str.strip(), errors="coerce")
        bad_hour = hours.isna() | (hours % 1 != 0) | (hours < 0) | (hours > 23)
        self._raise_first(bad_hour.to_numpy(), lines, "hour must be an integer in 0..23")

        values = {}
        for column in schema.value_columns:
            text = table[column].str.strip()
            empty = text == ""
            parsed = pd.to_numeric(text.where(~empty), errors="coerce")
            bad = (parsed.isna() & ~empty) | np.isinf(parsed.fillna(0.0))
            self._raise_first(bad.to_numpy(), lines, f"non-numeric value in column '{column}'")
            values[column] = parsed.astype(float)

        stamps = dates + pd.to_timedelta(hours.astype(int), unit="h")
        if schema.timezone:
            self._validate_clock(stamps, lines, schema.timezone)

        duplicated = stamps.duplicated().to_numpy()
        if duplicated.any():
            i = int(np.flatnonzero(duplicated)[0])
            raise DuplicateKey(DeliveryKey.from_timestamp(stamps.iloc[i].to_pydatetime()), int(lines[i]))

        steps = stamps.diff().dt.total_seconds().to_numpy()[1:]
        backwards = np.flatnonzero(steps <= 0)
        if backwards.size:
            raise NonMonotoneTimestamps(int(lines[backwards[0] + 1]))

        df = pd.DataFrame({k: v.to_numpy() for k, v in values.items()}, index=pd.DatetimeIndex(stamps))
        frame = MarketFrame.from_dataframe(df)
        gaps = frame.n_hours - len(frame)
        logger.info(f"Ingested {len(frame)} delivery hours ({gaps} hours absent from the grid)")
        return frame

    def summary(self, frame: MarketFrame) -> Dict[str, Any]:
        """Ingest statistics for CLI and API output"""
        keys = frame.keys()
        return {
            "keys": len(keys),
            "first_key": str(keys[0]) if keys else None,
            "last_key": str(keys[-1]) if keys else None,
            "absent_hours": frame.n_hours - len(frame),
            "missing_cells": {k: int(v) for k, v in frame.missing_counts().items() if v},
            "content_hash": frame.content_hash(),
        }

    def _read_bytes(self, source: CsvSource) -> bytes:
        if isinstance(source, bytes):
            return source
        if isinstance(source, (str, os.PathLike)):
            path = Path(source)
            if not path.exists():
                raise FileNotFoundError(f"File not found: {path}")
            return path.read_bytes()
        return source.read()

    @staticmethod
    def _raise_first(mask: np.ndarray, lines: np.ndarray, reason: str) -> None:
        if mask.any():
            raise MalformedRow(int(lines[np.flatnonzero(mask)[0]]), reason)

    @staticmethod
    def _validate_clock(stamps: pd.Series, lines: np.ndarray, timezone: str) -> None:
        """Reject local times that do not exist or are ambiguous in `timezone` (DST changes)"""
        for i, stamp in enumerate(stamps):
            try:
                stamp.tz_localize(timezone, nonexistent="raise", ambiguous="raise")
            except (pytz.exceptions.InvalidTimeError, ValueError) as e:
                raise MalformedRow(int(lines[i]), f"invalid local time in {timezone}: {e}")


def write_market_csv(frame_or_table: Union[MarketFrame, pd.DataFrame], path: Union[str, os.PathLike]) -> Path:
    """Write a frame (or a table already in CSV layout) in the documented schema"""
    table = frame_or_table.to_dataframe() if isinstance(frame_or_table, MarketFrame) else frame_or_table
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table[CSV_COLUMNS].to_csv(path, index=False, float_format="%.10f", na_rep="")
    return path
