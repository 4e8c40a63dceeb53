"""
Path samplers
Gaussian copula over marginal CDFs (LQC engine) and whole-vector bootstrap
of historical point-forecast errors (BOOTSTRAP engine)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from exceptions import EmptyPool, InsufficientWindow, NonFiniteInput
from market_data.calendar import DeliveryKey
from quantiles.marginal_quantiles import MarginalCdf

logger = logging.getLogger(__name__)

MIN_COPULA_DAYS = 20
PIT_CLIP = 1e-6
EIGEN_FLOOR = 1e-10

ENGINE_CODES = {"BOOTSTRAP": 1, "LQC": 2, "CGM": 3, "CGM_CUSTOM": 4}

FORECAST_MINUS_OBSERVED = "forecast_minus_observed"
OBSERVED_MINUS_FORECAST = "observed_minus_forecast"


def key_seed(master_seed: int, key: DeliveryKey, engine: str) -> int:
    """Independent seed stream per (key, engine) derived from the master seed"""
    sequence = np.random.SeedSequence([int(master_seed), key.day.toordinal(), key.hour, ENGINE_CODES.get(engine, 0)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """M jointly sampled paths of one market"""

    paths: np.ndarray
    generator: str
    seed: Optional[int] = None
    key: Optional[DeliveryKey] = None

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 2 or paths.shape[0] < 1:
            raise ValueError(f"Ensemble must be an (M, D) matrix with M >= 1, got shape {paths.shape}")
        if not np.all(np.isfinite(paths)):
            raise NonFiniteInput("Ensemble contains non-finite values")
        object.__setattr__(self, "paths", paths)

    @property
    def size(self) -> int:
        return self.paths.shape[0]

    @property
    def dimension(self) -> int:
        return self.paths.shape[1]


@dataclass(frozen=True, eq=False)
class CopulaSpec:
    """Gaussian copula covariance of the probit-transformed PITs"""

    covariance: np.ndarray
    cholesky: np.ndarray
    window_id: str = ""
    n_days: int = 0

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(np.diag(self.covariance))
        return self.covariance / np.outer(sd, sd)


@dataclass(frozen=True, eq=False)
class ErrorVectorPool:
    """Historical 10-vectors of point-forecast errors, sampled whole"""

    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        if vectors.size == 0:
            raise EmptyPool("Bootstrap error pool holds no vectors")
        vectors = vectors.reshape(-1, vectors.shape[-1])
        object.__setattr__(self, "vectors", vectors[np.all(np.isfinite(vectors), axis=1)])

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_forecasts(cls, point: np.ndarray, observed: np.ndarray,
                       sign: str = FORECAST_MINUS_OBSERVED) -> "ErrorVectorPool":
        """
        Pool of historical errors

        Args:
            point: point forecasts (n, 10)
            observed: observed paths (n, 10)
            sign: forecast_minus_observed (X_hat - X) or observed_minus_forecast
        """
        if sign == FORECAST_MINUS_OBSERVED:
            return cls(np.asarray(point) - np.asarray(observed))
        if sign == OBSERVED_MINUS_FORECAST:
            return cls(np.asarray(observed) - np.asarray(point))
        raise ValueError(f"Unknown bootstrap error sign: {sign}")


def repair_covariance(cov: np.ndarray, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """Floor eigenvalues at `floor` and re-symmetrize"""
    eigval, eigvec = np.linalg.eigh((cov + cov.T) / 2)
    if eigval.min() < floor:
        logger.debug(f"Flooring {int(np.sum(eigval < floor))} covariance eigenvalues at {floor}")
    repaired = (eigvec * np.maximum(eigval, floor)) @ eigvec.T
    return (repaired + repaired.T) / 2


def _cholesky(cov: np.ndarray) -> np.ndarray:
    jitter = 0.0
    for _ in range(10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter = EIGEN_FLOOR if jitter == 0 else jitter * 10
            logger.warning(f"Cholesky failed, retrying with jitter {jitter:.1e}")
    raise np.linalg.LinAlgError("Covariance is not positive definite after repair")


def estimate_copula_from_pits(pits: np.ndarray, window_id: str = "") -> CopulaSpec:
    """
    Copula covariance from a window of PIT vectors

    Args:
        pits: (n, D) PIT values F_hat(X); rows with missing values are dropped

    Raises:
        InsufficientWindow: fewer than 20 usable rows
    """
    pits = np.asarray(pits, dtype=float)
    usable = pits[np.all(np.isfinite(pits), axis=1)]
    if usable.shape[0] < MIN_COPULA_DAYS:
        raise InsufficientWindow(usable.shape[0], MIN_COPULA_DAYS)
    z = stats.norm.ppf(np.clip(usable, PIT_CLIP, 1 - PIT_CLIP))
    cov = repair_covariance(np.cov(z, rowvar=False, ddof=1))
    return CopulaSpec(covariance=cov, cholesky=_cholesky(cov), window_id=window_id, n_days=usable.shape[0])


def estimate_copula(cdfs: Sequence[Sequence[MarginalCdf]], observations: np.ndarray, window_id: str = "") -> CopulaSpec:
    """
    Copula covariance over a calibration window

    Args:
        cdfs: per window day, the D marginal CDFs forecast for that day
        observations: observed paths (n, D) aligned with `cdfs`
        window_id: label of the calibration window
    """
    observations = np.asarray(observations, dtype=float)
    pits = np.array([[cdf(x) for cdf, x in zip(day_cdfs, row)] for day_cdfs, row in zip(cdfs, observations)])
    return estimate_copula_from_pits(pits.reshape(len(observations), -1), window_id)


def sample_copula_paths(spec: CopulaSpec, cdfs: Sequence[MarginalCdf], M: int, seed: int,
                        key: Optional[DeliveryKey] = None) -> TrajectoryEnsemble:
    """
    Draw Z ~ N(0, Sigma) and map each coordinate through Phi and the marginal inverse

    Args:
        spec: copula covariance and Cholesky factor
        cdfs: one marginal CDF per subperiod
        M: number of paths
        seed: RNG seed; same inputs and seed give the same ensemble
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if len(cdfs) != spec.cholesky.shape[0]:
        raise ValueError(f"Copula dimension {spec.cholesky.shape[0]} does not match {len(cdfs)} marginals")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((M, spec.cholesky.shape[0])) @ spec.cholesky.T
    # unit variances so every margin stays uniform before the inverse CDF
    u = stats.norm.cdf(z / np.sqrt(np.sum(spec.cholesky ** 2, axis=1)))
    paths = np.column_stack([cdf.inverse(u[:, j]) for j, cdf in enumerate(cdfs)])
    return TrajectoryEnsemble(paths=paths, generator="LQC", seed=seed, key=key)


def sample_bootstrap_paths(point, pool: ErrorVectorPool, M: int, seed: int,
                           key: Optional[DeliveryKey] = None) -> TrajectoryEnsemble:
    """
    Point forecast plus error vectors drawn uniformly with replacement from the pool

    Args:
        point: PointPathForecast or a 10-vector
        pool: historical error vectors
        M: number of paths
        seed: RNG seed

    Raises:
        EmptyPool: if the pool holds no usable vector
    """
    if len(pool) == 0:
        raise EmptyPool("Bootstrap error pool is empty")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    values = np.asarray(getattr(point, "values", point), dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(pool), size=M)
    return TrajectoryEnsemble(paths=values + pool.vectors[draws], generator="BOOTSTRAP", seed=seed, key=key)
