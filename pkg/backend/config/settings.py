"""
Configuration for pathcast
Pydantic models with the published defaults, loaded from YAML with
--set overrides and .env defaults
"""

import hashlib
import json
import logging
import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from dateutil import parser as date_parser
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from exceptions import ConfigError

logger = logging.getLogger(__name__)

ENGINES = ("BOOTSTRAP", "LQC", "CGM", "CGM_CUSTOM")


class WindowConfig(BaseModel):
    """Calibration window lengths in days"""

    model_config = ConfigDict(extra="forbid")

    lasso: int = Field(396, gt=0)
    qr: int = Field(120, gt=0)
    copula: int = Field(120, gt=0)
    bootstrap: int = Field(240, gt=0)
    cgm: int = Field(630, gt=0)
    qr_min_obs: int = Field(30, gt=0)

    @property
    def lear_lead(self) -> int:
        """Days of out-of-sample LEAR forecasts needed before the test start"""
        return max(self.qr + self.copula, self.bootstrap)


class CgmArchitecture(BaseModel):
    """Layer widths of the three network modules"""

    model_config = ConfigDict(extra="forbid")

    ts_widths: List[int] = [512, 256, 64]
    delta_widths: List[int] = [128, 128]
    all_widths: List[int] = [256, 128, 64]
    latent_dim: int = Field(100, gt=0)
    embedding_dim: int = Field(2, gt=0)

    @field_validator("ts_widths", "delta_widths", "all_widths")
    @classmethod
    def _positive(cls, widths: List[int]) -> List[int]:
        if any(w <= 0 for w in widths):
            raise ValueError("layer widths must be positive integers")
        return widths

    @field_validator("ts_widths")
    @classmethod
    def _has_ts_output(cls, widths: List[int]) -> List[int]:
        if not widths:
            raise ValueError("the time-series module needs at least one layer")
        return widths

    def scaled(self, factor: float) -> "CgmArchitecture":
        """Copy with every hidden width multiplied by `factor`"""
        def resize(widths):
            return [max(1, int(round(w * factor))) for w in widths]

        return self.model_copy(update={
            "ts_widths": resize(self.ts_widths),
            "delta_widths": resize(self.delta_widths),
            "all_widths": resize(self.all_widths),
        })


class TrainConfig(BaseModel):
    """Training of one ensemble member and the ensemble layout"""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(1e-4, gt=0)
    batch_size: int = Field(1024, gt=0)
    patience: int = Field(10, gt=0)
    max_epochs: int = Field(500, gt=0)
    samples_per_example: int = Field(32, ge=2)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    loss: Literal["es", "custom"] = "es"
    omega: float = Field(0.5, ge=0, le=1)
    temperature: float = Field(4.0, gt=0)
    seed: int = 0
    members: int = Field(10, gt=0)
    samples_per_member: int = Field(1000, gt=0)


class SyntheticRegime(BaseModel):
    """Parameters of the synthetic market generator"""

    model_config = ConfigDict(extra="forbid")

    start_date: date = date(2019, 1, 1)
    days: int = Field(1100, gt=0)
    base_price: float = 45.0
    ar_coefficient: float = Field(0.9, ge=0, lt=1)
    price_noise: float = Field(4.0, ge=0)
    daily_amplitude: float = 12.0
    weekly_amplitude: float = 6.0
    drift: float = 1.0
    intraday_shift: float = Field(2.0, ge=0)
    intraday_vol: float = Field(1.0, ge=0)
    intraday_reversion: float = Field(12.0, gt=0)  # OU rate per subperiod length
    wind_error_scale: float = Field(0.6, ge=0)
    wind_error_persistence: float = Field(0.95, ge=0, lt=1)
    wind_capacity: float = Field(30000.0, gt=0)
    load_level: float = Field(55000.0, gt=0)
    missing_rate: float = Field(0.0, ge=0, lt=1)

    @field_validator("start_date", mode="before")
    @classmethod
    def _parse_date(cls, value):
        return date_parser.parse(value).date() if isinstance(value, str) else value


class BacktestConfig(BaseModel):
    """Everything a backtest run depends on; its hash keys checkpoints and run records"""

    model_config = ConfigDict(extra="forbid")

    data_path: Optional[str] = None
    test_start: Optional[date] = None
    test_days: int = Field(200, gt=0)
    windows: WindowConfig = WindowConfig()
    architecture: CgmArchitecture = CgmArchitecture()
    train: TrainConfig = TrainConfig()
    synthetic: SyntheticRegime = SyntheticRegime()
    engines: List[str] = ["BOOTSTRAP", "LQC"]
    ensemble_size: int = Field(10000, gt=0)
    scp_grid: List[float] = [round(0.05 * k, 2) for k in range(1, 20)]
    seed: int = 12345
    transform_target: bool = True
    lambda_grid_points: int = Field(40, gt=0)
    bootstrap_error_sign: Literal["forecast_minus_observed", "observed_minus_forecast"] = "forecast_minus_observed"
    custom_omega: float = Field(0.5, ge=0, le=1)
    n_jobs: int = 1
    checkpoint_dir: str = "checkpoints"
    out_dir: str = "reports"
    export_ensembles: bool = False

    @field_validator("test_start", mode="before")
    @classmethod
    def _parse_test_start(cls, value):
        return date_parser.parse(value).date() if isinstance(value, str) else value

    @field_validator("engines")
    @classmethod
    def _known_engines(cls, engines: List[str]) -> List[str]:
        unknown = [e for e in engines if e not in ENGINES]
        if unknown:
            raise ValueError(f"unknown engines {unknown}, choose from {list(ENGINES)}")
        return list(dict.fromkeys(engines))

    @field_validator("scp_grid")
    @classmethod
    def _scp_range(cls, grid: List[float]) -> List[float]:
        if not grid or any(not 0 < a <= 1 for a in grid):
            raise ValueError("SCP levels must lie in (0, 1]")
        return grid

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def cgm_hash(self) -> str:
        """Hash of what a CGM checkpoint depends on"""
        relevant = {
            "architecture": self.architecture.model_dump(mode="json"),
            "train": self.train.model_dump(mode="json"),
            "windows": {"cgm": self.windows.cgm},
            "test_start": self.test_start.isoformat() if self.test_start else None,
            "data_path": self.data_path,
        }
        return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()


# environment variable -> dotted config key
ENV_KEYS = {
    "PATHCAST_OUT_DIR": "out_dir",
    "PATHCAST_N_JOBS": "n_jobs",
}


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    node = data
    parts = dotted.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot set '{dotted}': '{part}' is not a section")
        node = child
    node[parts[-1]] = value


def _has_dotted(data: Dict[str, Any], dotted: str) -> bool:
    node = data
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True


def parse_override(text: str):
    """'key.sub=value' -> ('key.sub', value parsed as a YAML scalar)"""
    if "=" not in text:
        raise ConfigError(f"Override must look like key=value, got '{text}'")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse override value '{raw}': {e}")


def load_environment() -> None:
    """Read .env into the process environment (existing variables win)"""
    load_dotenv(override=False)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> BacktestConfig:
    """
    Load and validate a configuration

    Args:
        path: YAML file, or None for defaults only
        overrides: 'dotted.key=value' strings applied after the file

    Raises:
        ConfigError: unreadable file, bad override or failed validation
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping")

    for env, dotted in ENV_KEYS.items():
        if os.environ.get(env) and not _has_dotted(data, dotted):
            _set_dotted(data, dotted, yaml.safe_load(os.environ[env]))

    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(data, key, value)

    try:
        config = BacktestConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}")
    logger.debug(f"Loaded configuration {config.config_hash()[:12]}")
    return config


def log_level() -> str:
    return os.environ.get("PATHCAST_LOG_LEVEL", "INFO").upper()


def db_path() -> Optional[str]:
    return os.environ.get("PATHCAST_DB_PATH")
