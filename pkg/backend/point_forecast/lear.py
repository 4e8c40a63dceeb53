"""
LEAR point forecasts
One LASSO regression per subperiod on arsinh-transformed, robust-scaled
regressors and targets; predictions are mapped back to EUR/MWh
"""

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso, LinearRegression, lasso_path

from exceptions import DegenerateColumn, EmptyGrid, NonFiniteInput, SchemaMismatch
from market_data.calendar import N_SUBPERIODS, DeliveryKey
from market_data.features import FeatureVector
from market_data.transforms import RobustScaler, arsinh, inverse_arsinh

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
LASSO_TOL = 1e-10
LASSO_MAX_ITER = 100_000
GRID_POINTS = 40
GRID_RATIO = 1e-4


@dataclass(eq=False)
class LassoModel:
    """
    LASSO regression in the transformed space of one subperiod.
    Scalers of None mean the columns were passed in already normalized
    """

    coef: np.ndarray
    intercept: float
    lam: float
    subperiod: int = 0
    x_scaler: Optional[RobustScaler] = None
    y_scaler: Optional[RobustScaler] = None
    transform_target: bool = True
    schema_hash: Optional[str] = None

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.coef)

    def decision(self, z: np.ndarray) -> np.ndarray:
        """Prediction in the transformed space for normalized regressors"""
        return np.asarray(z, dtype=float) @ self.coef + self.intercept

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        """arsinh then robust scaling of raw regressors"""
        z = arsinh(np.asarray(raw, dtype=float))
        return self.x_scaler.transform(z) if self.x_scaler is not None else z

    def to_price(self, value: np.ndarray) -> np.ndarray:
        """Invert target scaling, then arsinh"""
        if self.y_scaler is not None:
            value = self.y_scaler.inverse(value)
        return inverse_arsinh(value) if self.transform_target else np.asarray(value)

    def predict(self, raw: np.ndarray) -> np.ndarray:
        """Price predictions for raw regressor rows"""
        return self.to_price(self.decision(self.normalize(raw)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subperiod": self.subperiod,
            "lambda": self.lam,
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "x_scaler": self.x_scaler.to_dict() if self.x_scaler is not None else None,
            "y_scaler": self.y_scaler.to_dict() if self.y_scaler is not None else None,
            "transform_target": self.transform_target,
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LassoModel":
        return cls(
            coef=np.asarray(data["coef"], dtype=float),
            intercept=float(data["intercept"]),
            lam=float(data["lambda"]),
            subperiod=int(data["subperiod"]),
            x_scaler=RobustScaler.from_dict(data["x_scaler"]) if data.get("x_scaler") else None,
            y_scaler=RobustScaler.from_dict(data["y_scaler"]) if data.get("y_scaler") else None,
            transform_target=bool(data.get("transform_target", True)),
            schema_hash=data.get("schema_hash"),
        )


@dataclass(frozen=True, eq=False)
class PointPathForecast:
    """Point forecast of the 10 subperiod prices of one market"""

    values: np.ndarray
    key: Optional[DeliveryKey] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_SUBPERIODS,) or not np.all(np.isfinite(values)):
            raise NonFiniteInput(f"Point forecast must be {N_SUBPERIODS} finite values")
        object.__setattr__(self, "values", values)


def _check_design(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"Design matrix {X.shape} does not match targets {y.shape}")
    if X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError(f"Need n >= 2 rows and p >= 1 columns, got {X.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("Design matrix or targets contain non-finite values")
    flat = np.flatnonzero(np.ptp(X, axis=0) == 0)
    if flat.size:
        raise DegenerateColumn(int(flat[0]))


def fit_lasso(X: np.ndarray, y: np.ndarray, lam: float, coef_init: Optional[np.ndarray] = None) -> LassoModel:
    """
    Minimize (1/2n)||y - Xb - c||^2 + lam * ||b||_1 with an unpenalized intercept

    Args:
        X: normalized design matrix (n, p)
        y: normalized targets (n,)
        lam: penalty, 0 gives the minimum-norm least squares fit
        coef_init: warm start (e.g. yesterday's coefficients)

    Returns:
        LassoModel without scalers

    Raises:
        DegenerateColumn: constant column
        NonFiniteInput: NaN or infinite entries
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(X, y)
    if lam < 0:
        raise ValueError(f"Penalty must be non-negative, got {lam}")

    if lam == 0:
        ols = LinearRegression(fit_intercept=True).fit(X, y)
        return LassoModel(coef=ols.coef_.copy(), intercept=float(ols.intercept_), lam=0.0)

    lasso = Lasso(alpha=lam, fit_intercept=True, tol=LASSO_TOL, max_iter=LASSO_MAX_ITER,
                  warm_start=coef_init is not None, selection="cyclic")
    if coef_init is not None:
        lasso.coef_ = np.array(coef_init, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        lasso.fit(X, y)
    return LassoModel(coef=lasso.coef_.copy(), intercept=float(lasso.intercept_), lam=float(lam))


def default_lambda_grid(X: np.ndarray, y: np.ndarray, points: int = GRID_POINTS, ratio: float = GRID_RATIO) -> np.ndarray:
    """Log-spaced descending grid from the smallest penalty that zeroes every coefficient"""
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(Xc.T @ yc)) / len(y))
    if lam_max <= 0:
        return np.array([0.0])
    return np.geomspace(lam_max, lam_max * ratio, points)


def aic(rss: float, n: int, df: int) -> float:
    return n * np.log(max(rss, np.finfo(float).tiny) / n) + 2 * df


def select_lambda(X: np.ndarray, y: np.ndarray, grid: Sequence[float]) -> float:
    """
    Grid penalty with the smallest AIC (active-set size as degrees of freedom),
    warm-starting down the grid. Ties go to the larger penalty

    Raises:
        EmptyGrid: if the grid is empty
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("Penalty grid is empty")
    if np.any(np.diff(grid) > 0):
        raise ValueError("Penalty grid must be sorted in descending order")
    if grid.size == 1:
        return float(grid[0])

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(X, y)
    n = len(y)
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()

    positive = grid[grid > 0]
    coefs = np.zeros((X.shape[1], 0))
    if positive.size:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            _, coefs, _ = lasso_path(Xc, yc, alphas=positive, tol=LASSO_TOL, max_iter=LASSO_MAX_ITER)
    if positive.size < grid.size:
        ols = LinearRegression(fit_intercept=False).fit(Xc, yc).coef_
        coefs = np.column_stack([coefs] + [ols] * (grid.size - positive.size))

    residuals = yc[:, None] - Xc @ coefs
    rss = np.sum(residuals ** 2, axis=0)
    df = np.count_nonzero(coefs, axis=0)
    scores = np.array([aic(r, n, int(k)) for r, k in zip(rss, df)])
    best = int(np.argmin(scores))
    logger.debug(f"AIC selected lambda={grid[best]:.3g} with {df[best]} active of {X.shape[1]}")
    return float(grid[best])


class LearForecaster:
    """Fits and applies the 10 subperiod models of one hourly market"""

    def __init__(self, transform_target: bool = True, grid_points: int = GRID_POINTS,
                 schema_hash: Optional[str] = None):
        """
        Initialize the forecaster

        Args:
            transform_target: apply arsinh to targets as well as regressors
            grid_points: size of the per-model penalty grid
            schema_hash: feature schema the models are trained on
        """
        self.transform_target = transform_target
        self.grid_points = grid_points
        self.schema_hash = schema_hash

    def fit(self, X_raw: np.ndarray, Y_raw: np.ndarray,
            previous: Optional[List[LassoModel]] = None) -> List[LassoModel]:
        """
        Fit one model per subperiod

        Args:
            X_raw: raw regressors (n, p)
            Y_raw: observed subperiod prices (n, 10)
            previous: last fit of the same market, used as warm start

        Returns:
            list of 10 LassoModels, subperiods 1..10
        """
        X_raw = np.asarray(X_raw, dtype=float)
        Y_raw = np.asarray(Y_raw, dtype=float)
        if not (np.all(np.isfinite(X_raw)) and np.all(np.isfinite(Y_raw))):
            raise NonFiniteInput("Training window contains non-finite values")
        x_scaler = RobustScaler.fit(arsinh(X_raw))
        Z = x_scaler.transform(arsinh(X_raw))

        models = []
        for j in range(Y_raw.shape[1]):
            target = arsinh(Y_raw[:, j]) if self.transform_target else Y_raw[:, j]
            y_scaler = RobustScaler.fit(target)
            y = y_scaler.transform(target)
            lam = select_lambda(Z, y, default_lambda_grid(Z, y, self.grid_points))
            warm = previous[j].coef if previous is not None else None
            model = fit_lasso(Z, y, lam, coef_init=warm)
            model.subperiod = j + 1
            model.x_scaler = x_scaler
            model.y_scaler = y_scaler
            model.transform_target = self.transform_target
            model.schema_hash = self.schema_hash
            models.append(model)
        return models


def predict_path(models: List[LassoModel], features: FeatureVector) -> PointPathForecast:
    """
    Point path for one market

    Raises:
        SchemaMismatch: if the features were built with another schema than the models
    """
    for model in models:
        if model.schema_hash is not None and model.schema_hash != features.schema_hash:
            raise SchemaMismatch(f"Model schema {model.schema_hash} != feature schema {features.schema_hash}")
        if model.coef.shape[0] != len(features):
            raise SchemaMismatch(f"Model expects {model.coef.shape[0]} regressors, got {len(features)}")
    return PointPathForecast(values=predict_matrix(models, features.values[None, :])[0])


def predict_matrix(models: List[LassoModel], X_raw: np.ndarray) -> np.ndarray:
    """Point paths for many rows, shape (n, len(models))"""
    return np.column_stack([model.predict(X_raw) for model in models])


def save_models(models: List[LassoModel], path: Union[str, Path], key: Optional[str] = None) -> Path:
    """Write models as a versioned JSON document"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"format_version": MODEL_FORMAT_VERSION, "key": key, "models": [m.to_dict() for m in models]}
    path.write_text(json.dumps(document, indent=1))
    return path


def load_models(path: Union[str, Path]) -> List[LassoModel]:
    document = json.loads(Path(path).read_text())
    if document.get("format_version") != MODEL_FORMAT_VERSION:
        raise SchemaMismatch(f"Unsupported model format version {document.get('format_version')}")
    return [LassoModel.from_dict(m) for m in document["models"]]
