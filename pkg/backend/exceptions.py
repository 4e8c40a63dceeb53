"""
Exceptions for pathcast
Every named failure of the forecasting pipeline has its own class so callers
(the backtester skip log, the API error mapping) can react per failure type
"""

from typing import Any, Iterable, List, Optional


class PathcastError(Exception):
    """Base class for all pathcast errors"""


# Market data

class MalformedRow(PathcastError, ValueError):
    """A CSV row could not be parsed"""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"Malformed row at line {line}: {reason}")


class DuplicateKey(PathcastError, ValueError):
    """Two CSV rows share the same (day, hour)"""

    def __init__(self, key: Any, line: int):
        self.key = key
        self.line = line
        super().__init__(f"Duplicate delivery key {key} at line {line}")


class NonMonotoneTimestamps(PathcastError, ValueError):
    """CSV rows are not in strictly increasing delivery order"""

    def __init__(self, line: int):
        self.line = line
        super().__init__(f"Delivery timestamps are not increasing at line {line}")


class InsufficientHistory(PathcastError, ValueError):
    """A feature needs cells that are missing from the frame"""

    def __init__(self, missing_cells: Iterable[str]):
        self.missing_cells: List[str] = list(missing_cells)
        preview = ", ".join(self.missing_cells[:8])
        more = "" if len(self.missing_cells) <= 8 else f" (+{len(self.missing_cells) - 8} more)"
        super().__init__(f"Insufficient history, missing cells: {preview}{more}")


class LeakageViolation(PathcastError, ValueError):
    """A feature requested a cell published after the forecast origin"""

    def __init__(self, cells: Iterable[str]):
        self.cells: List[str] = list(cells)
        super().__init__(f"Cells not available at forecast time: {', '.join(self.cells[:8])}")


class SchemaMismatch(PathcastError, ValueError):
    """Feature schema differs from the one a model was trained on"""


class DegenerateColumn(PathcastError, ValueError):
    """A column has zero spread and cannot be normalized"""

    def __init__(self, column: Any):
        self.column = column
        super().__init__(f"Column {column} has zero variance after normalization")


# Point forecast

class NonFiniteInput(PathcastError, ValueError):
    """Design matrix or targets contain NaN or infinite values"""


class EmptyGrid(PathcastError, ValueError):
    """Penalty grid is empty"""


# Marginal quantiles

class DegenerateRegressor(PathcastError, ValueError):
    """Quantile regression regressor is constant"""


# Path samplers

class InsufficientWindow(PathcastError, ValueError):
    """Calibration window holds too few usable days"""

    def __init__(self, n_days: int, required: int):
        self.n_days = n_days
        self.required = required
        super().__init__(f"Calibration window has {n_days} usable days, {required} required")


class EmptyPool(PathcastError, ValueError):
    """Bootstrap error pool is empty"""


# CGM

class ShapeMismatch(PathcastError, ValueError):
    """Network input has the wrong shape"""


class SingleSample(PathcastError, ValueError):
    """Energy score needs at least two samples"""


class NonFiniteLoss(PathcastError):
    """Training loss became NaN or infinite"""

    def __init__(self, batch_index: int, epoch: Optional[int] = None):
        self.batch_index = batch_index
        self.epoch = epoch
        where = f"epoch {epoch}, " if epoch is not None else ""
        super().__init__(f"Non-finite loss at {where}batch {batch_index}")


class UntrainedMember(PathcastError):
    """An ensemble member has not been trained"""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Ensemble member {index} is untrained")


# Scoring

class SingularCovariance(PathcastError, ValueError):
    """Sample covariance cannot be factorized even after jitter"""


# Trading

class MissingSubperiod(PathcastError, ValueError):
    """A price needed by a strategy is missing"""

    def __init__(self, subperiod: str):
        self.subperiod = subperiod
        super().__init__(f"Missing price for subperiod {subperiod}")


class DegenerateBounds(PathcastError, ValueError):
    """Crystal-ball bounds coincide, RTP undefined"""


# Config / IO

class ConfigError(PathcastError, ValueError):
    """Configuration file or override is invalid"""


class ReportIoError(PathcastError, OSError):
    """Report files could not be written"""
