"""
Synthetic intraday market generator
Stands in for proprietary transaction data: day-ahead prices follow a seasonal
AR process, subperiod VWAPs follow a mean-reverting deviation around them whose
volatility is driven by a persistent wind-forecast error, and an optional drift
lifts prices towards t_10
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from config.settings import SyntheticRegime
from market_data.calendar import N_PATH_SUBPERIODS, N_SUBPERIODS
from market_data.frame import CSV_COLUMNS, EXOGENOUS_COLUMNS, recompute_id3

logger = logging.getLogger(__name__)

# Share of capacity that one unit of standardized wind error represents
WIND_ERROR_SHARE = 0.05
# Stationary standard deviation of the log-volatility process
LOG_VOL_STD = 0.5
VWAP_DECIMALS = 6


@dataclass(eq=False)
class SyntheticMarket:
    """Generated table in CSV layout plus the volatility scale that produced each row"""

    table: pd.DataFrame
    noise_scale: np.ndarray


def _ar1(rng: np.random.Generator, n: int, phi: float, scale: float) -> np.ndarray:
    """Stationary AR(1) with innovation standard deviation `scale`"""
    out = np.empty(n)
    out[0] = rng.normal(0.0, scale / np.sqrt(1 - phi ** 2)) if phi < 1 else 0.0
    shocks = rng.normal(0.0, scale, n)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + shocks[t]
    return out


def ou_average_correlation(reversion: float, n: int = N_PATH_SUBPERIODS + 1) -> np.ndarray:
    """
    Correlation matrix of the averages of a stationary Ornstein-Uhlenbeck process
    over `n` consecutive subperiods, with `reversion` the rate per subperiod length
    """
    x = float(reversion)
    if x <= 0:
        raise ValueError(f"reversion must be positive, got {reversion}")
    decay = -np.expm1(-x)
    lag1 = decay ** 2 / (2 * (x - decay))
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return np.where(lags == 0, 1.0, lag1 * np.exp(-x * np.maximum(lags - 1, 0)))


def drift_profile(drift: float) -> np.ndarray:
    """Mean uplift of t_1..t_12: drift * (j/10)^2 up to t_10, flat afterwards"""
    j = np.arange(1, N_PATH_SUBPERIODS + 1, dtype=float)
    return drift * np.minimum(j / N_SUBPERIODS, 1.0) ** 2


def simulate(days: Optional[int] = None, seed: int = 0, regime: Optional[SyntheticRegime] = None) -> SyntheticMarket:
    """
    Generate `days` full days of hourly markets

    Args:
        days: number of days, defaults to the regime's
        seed: seed of every random draw
        regime: generator parameters

    Returns:
        SyntheticMarket with the CSV table and the per-row noise scale
    """
    regime = regime or SyntheticRegime()
    days = regime.days if days is None else days
    if days < 1:
        raise ValueError(f"days must be at least 1, got {days}")
    rng = np.random.default_rng(seed)
    n = days * 24

    stamps = pd.date_range(pd.Timestamp(regime.start_date), periods=n, freq="h")
    hour = stamps.hour.to_numpy()
    weekend = stamps.dayofweek.to_numpy() >= 5
    daily = np.sin(2 * np.pi * (hour - 6) / 24) + 0.5 * np.sin(4 * np.pi * (hour - 3) / 24)

    # load and wind forecasts with their realizations
    load_fc = regime.load_level * (1 + 0.15 * daily - 0.1 * weekend) + rng.normal(0, 0.01 * regime.load_level, n)
    load = load_fc + rng.normal(0, 0.02 * regime.load_level, n)
    wind_state = _ar1(rng, n, 0.98, 0.2)
    wind_fc = regime.wind_capacity / (1 + np.exp(-wind_state))

    phi = regime.wind_error_persistence
    log_vol = _ar1(rng, n, phi, LOG_VOL_STD * np.sqrt(1 - phi ** 2))
    noise_scale = np.exp(log_vol)
    error = rng.standard_normal(n)
    wind = np.clip(wind_fc + WIND_ERROR_SHARE * regime.wind_capacity * regime.wind_error_scale * noise_scale * error,
                   0.0, regime.wind_capacity)

    # day-ahead price: seasonal level, residual load pressure, AR deviations
    residual = (load_fc - wind_fc - regime.load_level * 0.5) / regime.load_level
    da = (regime.base_price + regime.daily_amplitude * daily - regime.weekly_amplitude * weekend
          + 20 * residual + _ar1(rng, n, regime.ar_coefficient, regime.price_noise))

    # intraday paths: a common shift against the wind error plus mean-reverting deviations
    shift = -regime.intraday_shift * noise_scale * error
    chol = np.linalg.cholesky(ou_average_correlation(regime.intraday_reversion))
    noise = regime.intraday_vol * noise_scale[:, None] * (rng.standard_normal((n, N_PATH_SUBPERIODS + 1)) @ chol.T)
    vwaps = np.empty((n, N_PATH_SUBPERIODS + 1))
    vwaps[:, 0] = da + shift + noise[:, 0]
    vwaps[:, 1:] = da[:, None] + shift[:, None] + drift_profile(regime.drift)[None, :] + noise[:, 1:]
    vwaps = np.round(vwaps, VWAP_DECIMALS)

    table = pd.DataFrame({
        "date": stamps.strftime("%Y-%m-%d"),
        "hour": hour,
        "id3": recompute_id3(vwaps[:, 1:]),
        "da": da,
        "load": load,
        "load_fc": load_fc,
        "wind": wind,
        "wind_fc": wind_fc,
        **{f"vwap_t{j}": vwaps[:, j] for j in range(N_PATH_SUBPERIODS + 1)},
    })[CSV_COLUMNS]

    if regime.missing_rate > 0:
        blank = rng.random((n, len(EXOGENOUS_COLUMNS))) < regime.missing_rate
        for i, column in enumerate(EXOGENOUS_COLUMNS):
            table.loc[blank[:, i], column] = np.nan
        logger.info(f"Blanked {int(blank.sum())} exogenous cells")

    logger.info(f"Generated {days} synthetic days ({n} markets) with seed {seed}")
    return SyntheticMarket(table=table, noise_scale=noise_scale)


def generate_synthetic(days: Optional[int] = None, seed: int = 0,
                       regime: Optional[SyntheticRegime] = None) -> pd.DataFrame:
    """Synthetic market table in the CSV layout accepted by ingest"""
    return simulate(days, seed, regime).table
