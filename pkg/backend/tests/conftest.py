# Test configuration and fixtures
import pytest
import tempfile
import shutil
from pathlib import Path
import sys

import numpy as np

# Add backend to Python path
backend_path = Path(__file__).parent.parent
sys.path.insert(0, str(backend_path))

from backtest.synthetic import generate_synthetic
from config.settings import BacktestConfig, CgmArchitecture, SyntheticRegime, TrainConfig, WindowConfig
from market_data.calendar import DeliveryKey
from market_data.loader import MarketDataLoader, write_market_csv


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def rng():
    """Seeded random generator"""
    return np.random.default_rng(20240101)


@pytest.fixture(scope="session")
def synthetic_table():
    """Sixty synthetic days starting on a Monday"""
    return generate_synthetic(60, seed=7, regime=SyntheticRegime(start_date="2021-01-04"))


@pytest.fixture(scope="session")
def synthetic_csv(synthetic_table, tmp_path_factory):
    """The synthetic table written in the market CSV schema"""
    return write_market_csv(synthetic_table, tmp_path_factory.mktemp("market") / "market.csv")


@pytest.fixture(scope="session")
def market_frame(synthetic_csv):
    """MarketFrame ingested from the synthetic CSV"""
    return MarketDataLoader().ingest(synthetic_csv)


@pytest.fixture
def late_key():
    """A market with a full week of history in the synthetic frame"""
    return DeliveryKey.parse("2021-02-15T10")


@pytest.fixture
def tiny_architecture():
    """Small network so CGM tests run in seconds"""
    return CgmArchitecture(ts_widths=[16, 8], delta_widths=[8], all_widths=[16, 8], latent_dim=4, embedding_dim=2)


@pytest.fixture
def tiny_train():
    """Two members, a few epochs"""
    return TrainConfig(batch_size=64, patience=2, max_epochs=3, samples_per_example=8,
                       members=2, samples_per_member=50, learning_rate=1e-3)


@pytest.fixture
def small_config(temp_dir, tiny_architecture, tiny_train):
    """Short windows so a backtest over the synthetic frame finishes quickly"""
    return BacktestConfig(
        test_days=3,
        windows=WindowConfig(lasso=20, qr=10, copula=20, bootstrap=20, cgm=14, qr_min_obs=10),
        architecture=tiny_architecture,
        train=tiny_train,
        engines=["BOOTSTRAP", "LQC"],
        ensemble_size=200,
        lambda_grid_points=10,
        scp_grid=[0.5, 0.9],
        checkpoint_dir=str(Path(temp_dir) / "checkpoints"),
        out_dir=str(Path(temp_dir) / "reports"),
    )
