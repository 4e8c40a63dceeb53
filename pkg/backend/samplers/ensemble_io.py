"""
Ensemble export and import
Binary column-major float64 matrix with a JSON sidecar, or CSV as fallback
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from exceptions import ReportIoError
from market_data.calendar import DeliveryKey
from samplers.path_samplers import TrajectoryEnsemble

logger = logging.getLogger(__name__)

ENSEMBLE_FORMAT_VERSION = 1


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def export_ensemble(ensemble: TrajectoryEnsemble, path: Union[str, Path], fmt: str = "bin") -> Path:
    """
    Write an ensemble

    Args:
        ensemble: paths to write
        path: target file; the suffix is replaced by .bin or .csv
        fmt: "bin" (column-major float64 + JSON sidecar) or "csv"

    Returns:
        path of the matrix file
    """
    path = Path(path)
    meta = {
        "format_version": ENSEMBLE_FORMAT_VERSION,
        "M": ensemble.size,
        "D": ensemble.dimension,
        "key": str(ensemble.key) if ensemble.key is not None else None,
        "generator": ensemble.generator,
        "seed": ensemble.seed,
        "dtype": "float64",
        "order": "F",
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "bin":
            target = path.with_suffix(".bin")
            np.asfortranarray(ensemble.paths, dtype=np.float64).ravel(order="F").tofile(target)
        elif fmt == "csv":
            target = path.with_suffix(".csv")
            columns = [f"t{j}" for j in range(1, ensemble.dimension + 1)]
            pd.DataFrame(ensemble.paths, columns=columns).to_csv(target, index=False, float_format="%.17g")
            meta["order"] = "rows"
        else:
            raise ValueError(f"Unknown ensemble format: {fmt}")
        _sidecar(target).write_text(json.dumps(meta, indent=2))
    except OSError as e:
        raise ReportIoError(f"Could not write ensemble to {path}: {e}")
    logger.debug(f"Exported ensemble {meta['key']} ({meta['M']}x{meta['D']}) to {target}")
    return target


def load_ensemble(path: Union[str, Path]) -> TrajectoryEnsemble:
    """
    Read an ensemble written by `export_ensemble`, or a bare CSV with one path per row
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Ensemble file not found: {path}")
    sidecar = _sidecar(path)
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}

    if path.suffix == ".bin":
        if not meta:
            raise FileNotFoundError(f"Binary ensemble needs its sidecar {sidecar}")
        flat = np.fromfile(path, dtype=meta.get("dtype", "float64"))
        paths = flat.reshape((meta["M"], meta["D"]), order="F")
    else:
        paths = pd.read_csv(path, float_precision="round_trip").to_numpy(dtype=float)

    return TrajectoryEnsemble(
        paths=paths,
        generator=meta.get("generator", "EXTERNAL"),
        seed=meta.get("seed"),
        key=DeliveryKey.parse(meta["key"]) if meta.get("key") else None,
    )
