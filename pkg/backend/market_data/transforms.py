"""
Variance-stabilizing transform and the two normalization schemes
RobustScaler feeds the LASSO models, ZScaler the generative network
"""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy import stats

from exceptions import DegenerateColumn


def arsinh(x):
    """Area hyperbolic sine, ln(x + sqrt(x^2 + 1))"""
    return np.arcsinh(x)


def inverse_arsinh(y):
    return np.sinh(y)


@dataclass(frozen=True, eq=False)
class RobustScaler:
    """Median / MAD scaling, MAD made consistent for the normal by dividing by z_0.75"""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "RobustScaler":
        """
        Fit on a vector (one series) or a matrix (one scaler per column)

        Raises:
            DegenerateColumn: if any column has zero MAD
        """
        values = np.asarray(values, dtype=float)
        center = np.median(values, axis=0)
        scale = stats.median_abs_deviation(values, axis=0, scale="normal")
        scale = np.atleast_1d(scale)
        bad = np.flatnonzero(~(scale > 0))
        if bad.size:
            raise DegenerateColumn(int(bad[0]) if values.ndim > 1 else 0)
        return cls(center=np.asarray(center, dtype=float), scale=np.asarray(scale.reshape(np.shape(center)), dtype=float))

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.center) / self.scale

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.scale + self.center

    def to_dict(self) -> Dict[str, Any]:
        return {"center": np.atleast_1d(self.center).tolist(), "scale": np.atleast_1d(self.scale).tolist(),
                "scalar": np.ndim(self.center) == 0}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RobustScaler":
        center = np.asarray(data["center"], dtype=float)
        scale = np.asarray(data["scale"], dtype=float)
        if data.get("scalar"):
            center, scale = center.reshape(()), scale.reshape(())
        return cls(center=center, scale=scale)


@dataclass(frozen=True, eq=False)
class ZScaler:
    """Mean / standard deviation scaling over a training period"""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, pooled: bool = False) -> "ZScaler":
        """
        Fit per column, or one scalar over all entries when `pooled`

        Raises:
            DegenerateColumn: if a standard deviation is zero
        """
        values = np.asarray(values, dtype=float)
        if pooled:
            mean, std = np.asarray(values.mean()), np.asarray(values.std())
        else:
            mean, std = values.mean(axis=0), values.std(axis=0)
        bad = np.flatnonzero(~(np.atleast_1d(std) > 0))
        if bad.size:
            raise DegenerateColumn(int(bad[0]))
        return cls(mean=np.asarray(mean, dtype=float), std=np.asarray(std, dtype=float))

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ZScaler":
        return cls(mean=np.asarray(data["mean"], dtype=float), std=np.asarray(data["std"], dtype=float))
