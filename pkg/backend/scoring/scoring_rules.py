"""
Proper scoring rules for trajectory ensembles
CRPS per subperiod, energy score, Dawid-Sebastiani and variogram scores per path
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
import torch
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from cgm.losses import energy_score_loss
from exceptions import SingularCovariance
from market_data.calendar import DeliveryKey

logger = logging.getLogger(__name__)

DSS_JITTER = 1e-8


def _samples(ensemble) -> np.ndarray:
    return np.asarray(getattr(ensemble, "paths", ensemble), dtype=float)


def _observation(observation) -> np.ndarray:
    return np.asarray(getattr(observation, "values", observation), dtype=float)


def crps(samples, observation: float) -> float:
    """
    Sample CRPS of one margin:
        mean |x_m - y| - 1/(2 M^2) * sum_{m,n} |x_m - x_n|
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1:
        raise ValueError("CRPS needs at least one sample")
    return float(crps_margins(x[:, None], np.array([observation]))[0])


def crps_margins(samples, observation) -> np.ndarray:
    """CRPS of every column of an (M, D) ensemble, shape (D,)"""
    x = np.sort(_samples(samples), axis=0)
    y = _observation(observation)
    M = x.shape[0]
    accuracy = np.mean(np.abs(x - y), axis=0)
    # sum_{m,n} |x_m - x_n| = 2 * sum_i (2i - M - 1) x_(i)
    rank_weights = 2 * np.arange(1, M + 1) - M - 1
    spread = 2 * (rank_weights @ x)
    return accuracy - spread / (2 * M * M)


def energy_score(samples, observation) -> float:
    """
    Energy score of a path ensemble, shared with the network's training loss

    Raises:
        SingleSample: if M < 2
    """
    x = torch.from_numpy(np.ascontiguousarray(_samples(samples), dtype=np.float64))
    y = torch.from_numpy(np.ascontiguousarray(_observation(observation), dtype=np.float64))
    with torch.no_grad():
        return float(energy_score_loss(x, y))


def dawid_sebastiani(samples, observation) -> float:
    """
    log det S + (y - mean)' S^-1 (y - mean) with S the (M-1)-denominator sample covariance.
    1e-8 * I is added only when the plain Cholesky factorization fails

    Raises:
        SingularCovariance: if M <= D or the jittered covariance is still singular
    """
    x = _samples(samples)
    y = _observation(observation)
    M, D = x.shape
    if M <= D:
        raise SingularCovariance(f"Need more than {D} samples for a {D}-dimensional covariance, got {M}")
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    try:
        factor = cho_factor(cov, lower=True)
    except LinAlgError:
        logger.warning(f"Singular ensemble covariance, adding {DSS_JITTER} jitter")
        try:
            factor = cho_factor(cov + DSS_JITTER * np.eye(D), lower=True)
        except LinAlgError:
            raise SingularCovariance("Ensemble covariance is singular after jitter")
    k = y - x.mean(axis=0)
    log_det = 2 * np.sum(np.log(np.diag(factor[0])))
    value = float(log_det + k @ cho_solve(factor, k))
    if not np.isfinite(value):
        raise SingularCovariance("Dawid-Sebastiani score is not finite")
    return value


def default_weights(D: int) -> np.ndarray:
    return np.full((D, D), 1.0 / D ** 2)


def variogram_score(samples, observation, p: float = 1.0, weights: Optional[np.ndarray] = None) -> float:
    """
    sum_{i,j} w_ij (|y_i - y_j|^p - mean_m |x_mi - x_mj|^p)^2

    Args:
        samples: (M, D) ensemble
        observation: (D,) observed path
        p: order of the variogram, > 0
        weights: (D, D) nonnegative weights, default 1/D^2
    """
    if p <= 0:
        raise ValueError(f"Variogram order must be positive, got {p}")
    x = _samples(samples)
    y = _observation(observation)
    D = y.shape[0]
    weights = default_weights(D) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (D, D) or np.any(weights < 0):
        raise ValueError("Variogram weights must be a nonnegative D x D matrix")
    observed = np.abs(y[:, None] - y[None, :]) ** p
    expected = np.mean(np.abs(x[:, :, None] - x[:, None, :]) ** p, axis=0)
    return float(np.sum(weights * (observed - expected) ** 2))


def median_absolute_errors(samples, observation) -> np.ndarray:
    """|median path - observation| per subperiod"""
    return np.abs(np.median(_samples(samples), axis=0) - _observation(observation))


def score_ensemble(samples, observation, key: Optional[DeliveryKey] = None) -> Dict[str, Any]:
    """
    All scores of one market as a flat record; a singular covariance leaves dss as NaN
    """
    x = _samples(samples)
    y = _observation(observation)
    try:
        dss = dawid_sebastiani(x, y)
    except SingularCovariance as e:
        logger.warning(f"{key}: DSS missing ({e})")
        dss = float("nan")
    record: Dict[str, Any] = {}
    if key is not None:
        record.update({"date": key.day.isoformat(), "hour": key.hour, "peak_flag": "on" if key.is_on_peak else "off"})
    record.update({
        "es": energy_score(x, y) if x.shape[0] >= 2 else float("nan"),
        "dss": dss,
        "vs1": variogram_score(x, y, p=1.0),
        "vs05": variogram_score(x, y, p=0.5),
    })
    for j, value in enumerate(crps_margins(x, y), start=1):
        record[f"crps_t{j}"] = float(value)
    for j, value in enumerate(median_absolute_errors(x, y), start=1):
        record[f"mae_t{j}"] = float(value)
    return record
