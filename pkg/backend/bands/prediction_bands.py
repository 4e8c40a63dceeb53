"""
Simultaneous prediction bands by extreme-trajectory removal
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UPPER = "UPPER"
LOWER = "LOWER"
SIDES = (UPPER, LOWER)

SCP_GRID = tuple(np.round(np.arange(1, 20) * 0.05, 2))


@dataclass(frozen=True, eq=False)
class PredictionBand:
    """One-sided band with simultaneous coverage `scp` over all subperiods"""

    side: str
    scp: float
    values: np.ndarray
    survivors: np.ndarray

    def covers(self, paths: np.ndarray) -> np.ndarray:
        """Whether each path lies entirely on the inner side of the band"""
        paths = np.atleast_2d(np.asarray(paths, dtype=float))
        if self.side == UPPER:
            return np.all(paths <= self.values, axis=1)
        return np.all(paths >= self.values, axis=1)


def survivor_count(M: int, scp: float) -> int:
    """ceil(scp * M), guarded against floating point round-up"""
    return max(1, math.ceil(scp * M - 1e-9))


def removal_order(paths: np.ndarray, side: str) -> np.ndarray:
    """
    Order in which trajectories are trimmed: repeatedly the one holding the global
    maximum (UPPER) or minimum (LOWER) among those left, lower index first on ties
    """
    if side not in SIDES:
        raise ValueError(f"Band side must be one of {SIDES}, got {side}")
    extreme = paths.max(axis=1) if side == UPPER else -paths.min(axis=1)
    index = np.arange(paths.shape[0])
    return np.lexsort((index, -extreme))


def _check_scp(scp: float) -> None:
    if not 0 < scp <= 1:
        raise ValueError(f"SCP must be in (0, 1], got {scp}")


def _band_from_order(paths, order, scp, side) -> PredictionBand:
    keep = survivor_count(paths.shape[0], scp)
    survivors = np.sort(order[paths.shape[0] - keep:])
    kept = paths[survivors]
    values = kept.max(axis=0) if side == UPPER else kept.min(axis=0)
    return PredictionBand(side=side, scp=float(scp), values=values, survivors=survivors)


def build_band(ensemble, scp: float, side: str) -> PredictionBand:
    """
    Trim extreme trajectories until ceil(scp * M) remain; the band is their
    pointwise max (UPPER) or min (LOWER)

    Args:
        ensemble: TrajectoryEnsemble or (M, D) matrix
        scp: simultaneous coverage level in (0, 1]
        side: UPPER or LOWER
    """
    _check_scp(scp)
    paths = np.asarray(getattr(ensemble, "paths", ensemble), dtype=float)
    return _band_from_order(paths, removal_order(paths, side), scp, side)


def build_bands(ensemble, scps: Sequence[float] = SCP_GRID, side: str = UPPER) -> Dict[float, PredictionBand]:
    """Bands for many SCP levels sharing one trimming order"""
    paths = np.asarray(getattr(ensemble, "paths", ensemble), dtype=float)
    order = removal_order(paths, side)
    bands = {}
    for scp in scps:
        _check_scp(scp)
        bands[float(scp)] = _band_from_order(paths, order, scp, side)
    return bands


def empirical_scp(band: PredictionBand, held_out) -> float:
    """
    Fraction of held-out paths lying entirely below (UPPER) or above (LOWER) the band

    Args:
        band: the band to check
        held_out: PricePaths or an (n, D) matrix
    """
    if isinstance(held_out, np.ndarray):
        paths = held_out
    else:
        paths = np.array([np.asarray(getattr(p, "values", p), dtype=float) for p in held_out])
    if len(paths) == 0:
        raise ValueError("Held-out set is empty")
    return float(np.mean(band.covers(paths)))
