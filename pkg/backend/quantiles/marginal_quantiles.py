"""
Quantile regression on point forecasts and the marginal CDFs built from it
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from exceptions import DegenerateRegressor

logger = logging.getLogger(__name__)

PERCENTILES = np.round(np.arange(1, 100) / 100, 2)
MIN_OBSERVATIONS = 30

# Smoothing widths of the IRLS continuation, relative to the target spread
SMOOTHING_SCHEDULE = (1e-2, 1e-4, 1e-6)
MAX_SWEEPS = 40
COEF_TOL = 1e-9


def pinball_loss(residuals: np.ndarray, p) -> np.ndarray:
    """Check loss rho_p summed over the last axis"""
    return np.sum(np.maximum(p * residuals, (p - 1) * residuals), axis=-1)


def _solve(x, y, w, p, with_slope):
    """Weighted normal equations of one MM step, batched over leading axes"""
    drift = 2 * p - 1
    s0 = w.sum(-1)
    t0 = (w * y).sum(-1) + drift * y.shape[-1]
    if not with_slope:
        return t0 / s0, np.zeros_like(s0)
    s1 = (w * x).sum(-1)
    s2 = (w * x * x).sum(-1)
    t1 = (w * x * y).sum(-1) + drift * x.sum(-1)
    det = s0 * s2 - s1 * s1
    intercept = (s2 * t0 - s1 * t1) / det
    slope = (s0 * t1 - s1 * t0) / det
    return intercept, slope


def _polish(x, y, p, intercept, slope, with_slope):
    """
    Replace the smoothed solution by the interpolating fit through the observations
    with the smallest residuals when that does not raise the check loss
    """
    def fit(a, b):
        return a[..., None] + (b[..., None] * x if with_slope else 0.0)

    residual = y - fit(intercept, slope)
    y = np.broadcast_to(y, residual.shape)
    x = np.broadcast_to(x, residual.shape) if with_slope else None
    order = np.argsort(np.abs(residual), axis=-1, kind="stable")
    i = order[..., 0]
    yi = np.take_along_axis(y, i[..., None], -1)[..., 0]
    if with_slope:
        k = order[..., 1]
        xi = np.take_along_axis(x, i[..., None], -1)[..., 0]
        xk = np.take_along_axis(x, k[..., None], -1)[..., 0]
        yk = np.take_along_axis(y, k[..., None], -1)[..., 0]
        gap = xk - xi
        safe = np.where(gap == 0, 1.0, gap)
        cand_slope = np.where(gap == 0, slope, (yk - yi) / safe)
        cand_intercept = np.where(gap == 0, intercept, yi - cand_slope * xi)
    else:
        cand_slope = slope
        cand_intercept = yi
    before = pinball_loss(residual, p)
    after = pinball_loss(y - fit(cand_intercept, cand_slope), p)
    better = after <= before
    return np.where(better, cand_intercept, intercept), np.where(better, cand_slope, slope)


def fit_quantiles(x: Optional[np.ndarray], y: np.ndarray, probs=PERCENTILES) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear quantile regressions y ~ a + b*x for many probabilities at once

    Minimizes the check loss by iteratively reweighted least squares on a
    majorized, smoothed check loss, shrinking the smoothing width down to 1e-6
    of the target spread, then polishes to the interpolating vertex.

    Args:
        x: regressor (..., n), or None for intercept-only fits
        y: targets (..., n)
        probs: probabilities (K,)

    Returns:
        (intercepts, slopes), each of shape (..., K)

    Raises:
        DegenerateRegressor: if x is constant over a fit
    """
    y = np.asarray(y, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("Quantile probabilities must lie in (0, 1)")
    with_slope = x is not None
    if with_slope:
        x = np.broadcast_to(np.asarray(x, dtype=float), y.shape)
        if np.any(np.ptp(x, axis=-1) == 0):
            raise DegenerateRegressor("Quantile regression regressor is constant")

    # batch axis for the probabilities, just before the observations
    yb = y[..., None, :]
    xb = x[..., None, :] if with_slope else None
    pb = probs[:, None]
    shape = y.shape[:-1] + (probs.size,)

    spread = np.maximum(np.std(y, axis=-1, keepdims=True), 1e-12)[..., None, :]
    intercept = np.broadcast_to(np.median(y, axis=-1)[..., None], shape).copy()
    slope = np.zeros(shape)
    for width in SMOOTHING_SCHEDULE:
        eps = width * spread
        for _ in range(MAX_SWEEPS):
            fitted = intercept[..., None] + (slope[..., None] * xb if with_slope else 0.0)
            w = 1.0 / np.maximum(np.abs(yb - fitted), eps)
            new_intercept, new_slope = _solve(xb, yb, w, pb[..., 0], with_slope)
            change = max(np.max(np.abs(new_intercept - intercept)), np.max(np.abs(new_slope - slope)))
            intercept, slope = new_intercept, new_slope
            if change < COEF_TOL * max(1.0, float(np.max(spread))):
                break

    return _polish(xb, yb, pb, intercept, slope, with_slope)


def fit_quantile(point_forecasts: Optional[np.ndarray], observed: np.ndarray, p: float) -> Tuple[float, float]:
    """
    One quantile regression of observed prices on point forecasts

    Args:
        point_forecasts: regressor, or None for an intercept-only fit
        observed: targets, at least 30 of them
        p: probability in (0, 1)

    Returns:
        (slope, intercept)
    """
    observed = np.asarray(observed, dtype=float)
    if observed.size < MIN_OBSERVATIONS:
        raise ValueError(f"Quantile regression needs at least {MIN_OBSERVATIONS} observations, got {observed.size}")
    if not 0 < p < 1:
        raise ValueError(f"Probability must be in (0, 1), got {p}")
    intercept, slope = fit_quantiles(point_forecasts, observed, np.array([p]))
    return float(slope[0]), float(intercept[0])


@dataclass(frozen=True, eq=False)
class QuantileFan:
    """99 percentile predictions of one subperiod, sorted"""

    values: np.ndarray
    subperiod: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != PERCENTILES.shape or not np.all(np.isfinite(values)):
            raise ValueError(f"Quantile fan needs {PERCENTILES.size} finite values")
        # rearrangement: crossings are repaired by sorting
        object.__setattr__(self, "values", np.sort(values))

    def tail_slopes(self) -> Tuple[float, float]:
        """Price change per 0.01 probability at each end, from the nearest non-flat segment"""
        steps = np.diff(self.values)
        nonzero = np.flatnonzero(steps > 0)
        if nonzero.size == 0:
            return 1e-6, 1e-6
        return float(steps[nonzero[0]]), float(steps[nonzero[-1]])

    def to_list(self):
        return self.values.tolist()


class MarginalCdf:
    """Piecewise-linear CDF through the fan knots with linear tails, clipped to [0, 1]"""

    def __init__(self, fan: QuantileFan):
        self.fan = fan
        low, high = fan.tail_slopes()
        knots = np.concatenate([[fan.values[0] - low], fan.values, [fan.values[-1] + high]])
        # nudge ties so the knot sequence is strictly increasing and invertible
        step = 1e-6 * max(1.0, float(knots[-1] - knots[0]))
        for i in (range(1, knots.size) if np.any(np.diff(knots) <= 0) else ()):
            if knots[i] <= knots[i - 1]:
                knots[i] = knots[i - 1] + step
        self.knots = knots
        self.probs = np.concatenate([[0.0], PERCENTILES, [1.0]])

    def __call__(self, x):
        return np.interp(x, self.knots, self.probs)

    def inverse(self, u):
        return np.interp(u, self.probs, self.knots)


def build_cdf(fan: QuantileFan, j: Optional[int] = None) -> MarginalCdf:
    """Marginal CDF of subperiod j from its quantile fan"""
    if j is not None and fan.subperiod and j != fan.subperiod:
        raise ValueError(f"Fan belongs to subperiod {fan.subperiod}, not {j}")
    return MarginalCdf(fan)


class QuantileForecaster:
    """Rolling quantile regressions of observed prices on LEAR point forecasts"""

    def __init__(self, min_observations: int = MIN_OBSERVATIONS, probs=PERCENTILES):
        self.min_observations = min_observations
        self.probs = np.asarray(probs, dtype=float)

    def fit(self, point: np.ndarray, observed: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Fit all percentiles for a batch of markets

        Args:
            point: point forecasts (..., n) over the calibration window
            observed: observed prices (..., n)

        Returns:
            (intercepts, slopes) of shape (..., 99)
        """
        if np.shape(observed)[-1] < self.min_observations:
            raise ValueError(f"Calibration window has {np.shape(observed)[-1]} observations, "
                             f"{self.min_observations} required")
        return fit_quantiles(point, observed, self.probs)

    @staticmethod
    def predict(coefficients: Tuple[np.ndarray, np.ndarray], point: np.ndarray) -> np.ndarray:
        """Percentile predictions (..., 99), sorted along the last axis"""
        intercept, slope = coefficients
        return np.sort(intercept + slope * np.asarray(point, dtype=float)[..., None], axis=-1)

    def fans(self, coefficients: Tuple[np.ndarray, np.ndarray], point: np.ndarray):
        """Fans of the 10 subperiods of one market from its point path"""
        q = self.predict(coefficients, point)
        return [QuantileFan(values=q[j], subperiod=j + 1) for j in range(q.shape[0])]
