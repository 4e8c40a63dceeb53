"""
Delivery calendar for hourly intraday products
Defines delivery keys, the subperiod grid before delivery and the
availability (exposure) table that decides what is known at forecast time
"""

from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Dict, Tuple

N_SUBPERIODS = 10          # forecast target t_1..t_10
N_PATH_SUBPERIODS = 12     # t_1..t_12, the last two only feed ID3 and sigma

# Subperiod windows as (start, end) offsets in minutes relative to delivery start.
SUBPERIOD_WINDOWS: Dict[int, Tuple[int, int]] = {
    0: (-195, -180),
    1: (-175, -165),
    **{j: (-165 + 15 * (j - 2), -150 + 15 * (j - 2)) for j in range(2, 13)},
}

SUBPERIOD_MINUTES: Dict[int, int] = {j: end - start for j, (start, end) in SUBPERIOD_WINDOWS.items()}

# Forecast origin relative to delivery start
FORECAST_LEAD = timedelta(hours=3, minutes=5)

# Minimum lag (hours between market starts) at which a series is exposed to a forecast.
SERIES_MIN_LAG: Dict[str, int] = {
    "id3": 4,
    "sigma": 4,
    "load": 4,
    "wind": 4,
    "da": 0,
    "load_fc": 0,
    "wind_fc": 0,
    "vwap_t0": 0,
    # partial paths of the two markets closest to delivery
    **{f"vwap_t{j}": 2 for j in range(9, 13)},
    **{f"vwap_t{j}": 3 for j in range(5, 9)},
    **{f"vwap_t{j}": 4 for j in range(1, 5)},
}

ON_PEAK_HOURS = range(8, 20)


def _validate_calendar() -> None:
    """Assert the subperiod grid: t_1 is 10 minutes, the rest 15, contiguous from t_1 to delivery"""
    assert SUBPERIOD_MINUTES[1] == 10, "t_1 must span 10 minutes"
    for j in range(2, 13):
        assert SUBPERIOD_MINUTES[j] == 15, f"t_{j} must span 15 minutes"
        assert SUBPERIOD_WINDOWS[j][0] == SUBPERIOD_WINDOWS[j - 1][1], f"t_{j} is not contiguous"
    assert SUBPERIOD_WINDOWS[12][1] == 0, "t_12 must end at delivery"
    assert SUBPERIOD_WINDOWS[10][1] == -30, "t_10 must end 30 minutes before delivery"


_validate_calendar()


@dataclass(frozen=True, order=True)
class DeliveryKey:
    """One hourly product: delivery day and hour (0-23)"""

    day: date
    hour: int

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise ValueError(f"Delivery hour must be in 0..23, got {self.hour}")

    @property
    def start(self) -> datetime:
        """Delivery start as a naive timestamp in the frame's time convention"""
        return datetime(self.day.year, self.day.month, self.day.day, self.hour)

    @property
    def forecast_origin(self) -> datetime:
        return self.start - FORECAST_LEAD

    @property
    def is_on_peak(self) -> bool:
        return self.hour in ON_PEAK_HOURS

    @property
    def weekday(self) -> int:
        """ISO weekday, 1 = Monday .. 7 = Sunday"""
        return self.day.isoweekday()

    def shifted(self, hours: int) -> "DeliveryKey":
        """Key `hours` later (negative for earlier)"""
        moved = self.start + timedelta(hours=hours)
        return DeliveryKey(moved.date(), moved.hour)

    @classmethod
    def from_timestamp(cls, ts: datetime) -> "DeliveryKey":
        return cls(ts.date(), ts.hour)

    @classmethod
    def parse(cls, text: str) -> "DeliveryKey":
        """Inverse of str(): 'YYYY-MM-DDTHH'"""
        day, _, hour = text.strip().partition("T")
        try:
            return cls(date.fromisoformat(day), int(hour))
        except ValueError:
            raise ValueError(f"Delivery key must look like YYYY-MM-DDTHH, got '{text}'")

    def __str__(self) -> str:
        return f"{self.day.isoformat()}T{self.hour:02d}"


def min_lag(series: str) -> int:
    """Minimum lag in hours at which `series` may feed a forecast"""
    try:
        return SERIES_MIN_LAG[series]
    except KeyError:
        raise ValueError(f"Unknown series: {series}")


def availability_time(market: DeliveryKey, series: str) -> datetime:
    """Time at which the cell (market, series) becomes usable"""
    return market.start + timedelta(hours=min_lag(series)) - FORECAST_LEAD


def is_available(market: DeliveryKey, series: str, target: DeliveryKey) -> bool:
    return availability_time(market, series) <= target.forecast_origin
