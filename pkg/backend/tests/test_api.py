"""
Integration tests for FastAPI endpoints
"""
import pytest
import os
import tempfile
from fastapi.testclient import TestClient
import numpy as np
import sys
from pathlib import Path

# Add backend to Python path
backend_path = Path(__file__).parent.parent
sys.path.insert(0, str(backend_path))

# The run store opens PATHCAST_DB_PATH at import
os.environ["PATHCAST_DB_PATH"] = os.path.join(tempfile.mkdtemp(), "api_runs.db")

from api.api_server import app, run_store
from backtest.reports import BacktestReport
from trading.ledger import ProfitLedger

import pandas as pd


@pytest.fixture
def client():
    """Create test client for FastAPI app"""
    with TestClient(app, base_url="http://testserver") as test_client:
        yield test_client


@pytest.fixture
def clean_store():
    """Empty run store before and after a test"""
    run_store.clear_all_data()
    yield run_store
    run_store.clear_all_data()


@pytest.fixture
def ensemble(rng):
    """Fifty trajectories rising to their peak at t_7"""
    base = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0, 7.0, 6.0, 5.0])
    return (base + 0.1 * rng.normal(size=(50, 10))).tolist()


class TestHealthEndpoint:
    """Test health check endpoint"""

    def test_health_check(self, client):
        """Test health endpoint returns 200"""
        response = client.get("/health")
        assert response.status_code == 200

        data = response.json()
        assert data["status"] == "healthy"
        assert "timestamp" in data

    def test_root(self, client):
        """Root lists the endpoints"""
        data = client.get("/").json()
        assert data["message"] == "pathcast API"
        assert set(data["endpoints"]) == {"ingest", "score", "bands", "trade", "runs"}


class TestIngestEndpoint:
    """Test market CSV validation"""

    def test_ingest_synthetic_csv(self, client, synthetic_csv):
        """A valid CSV returns its summary"""
        with open(synthetic_csv, "rb") as f:
            response = client.post("/ingest", files={"file": ("market.csv", f, "text/csv")})
        assert response.status_code == 200
        data = response.json()
        assert data["keys"] == 60 * 24
        assert data["first_key"].startswith("2021-01-04")
        assert len(data["content_hash"]) == 64

    def test_ingest_duplicate_rows(self, client, synthetic_table):
        """Validation errors are 422 with the error name"""
        table = pd.concat([synthetic_table.iloc[:2], synthetic_table.iloc[[1]]])
        content = table.to_csv(index=False).encode()
        response = client.post("/ingest", files={"file": ("dup.csv", content, "text/csv")})
        assert response.status_code == 422
        assert "DuplicateKey" in response.json()["detail"]

    def test_ingest_without_file(self, client):
        """The file field is required"""
        assert client.post("/ingest").status_code == 422


class TestScoreEndpoint:
    """Test ensemble scoring"""

    def test_score_fixture(self, client):
        """Symmetric two-sample fixture scores ES 0; DSS is undefined"""
        response = client.post("/score", json={"paths": [[0.0, 0.0], [2.0, 2.0]], "observed": [1.0, 1.0]})
        assert response.status_code == 200
        data = response.json()
        assert data["es"] == pytest.approx(0.0, abs=1e-12)
        assert data["dss"] is None
        assert data["crps_t1"] == pytest.approx(0.5)

    def test_score_shape_mismatch(self, client):
        """Observed length must match the ensemble dimension"""
        response = client.post("/score", json={"paths": [[0.0, 0.0], [2.0, 2.0]], "observed": [1.0, 1.0, 1.0]})
        assert response.status_code == 422
        assert "ShapeMismatch" in response.json()["detail"]

    def test_score_ragged_paths(self, client):
        """Ragged trajectories are rejected"""
        response = client.post("/score", json={"paths": [[0.0, 0.0], [2.0]], "observed": [1.0, 1.0]})
        assert response.status_code == 422


class TestBandsEndpoint:
    """Test prediction bands"""

    def test_upper_fixture(self, client):
        """T1 then T3 are trimmed at SCP 0.5"""
        paths = [[1.0, 5.0], [2.0, 2.0], [4.0, 1.0], [3.0, 3.0]]
        response = client.post("/bands", json={"paths": paths, "scp": [0.5], "side": "UPPER"})
        assert response.status_code == 200
        bands = response.json()["bands"]
        assert bands == [{"side": "UPPER", "scp": 0.5, "chosen_j": 2, "values": [3.0, 3.0], "survivors": 2}]

    def test_both_sides(self, client, ensemble):
        """Without a side both are returned for every level"""
        bands = client.post("/bands", json={"paths": ensemble, "scp": [0.5, 0.9]}).json()["bands"]
        assert [(b["side"], b["scp"]) for b in bands] == [("UPPER", 0.5), ("UPPER", 0.9), ("LOWER", 0.5),
                                                          ("LOWER", 0.9)]

    def test_unknown_side(self, client, ensemble):
        """Unknown sides are rejected"""
        response = client.post("/bands", json={"paths": ensemble, "scp": [0.5], "side": "MIDDLE"})
        assert response.status_code == 422


class TestTradeEndpoint:
    """Test majority-vote trading"""

    def test_trade(self, client, ensemble):
        """Majority vote picks the ensemble peak"""
        observed = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 6.0, 5.0]
        response = client.post("/trade", json={"paths": ensemble, "observed": observed, "t0": 0.5})
        assert response.status_code == 200
        data = response.json()
        assert data["majority"] == {"chosen_j": 7, "revenue": 8.0}
        assert data["observed_best"] == 8
        assert data["cb_max"] == 10.0 and data["cb_min"] == 1.0
        assert data["naive_last"]["revenue"] == 5.0
        assert data["naive_first"]["revenue"] == 0.5

    def test_trade_needs_ten_subperiods(self, client):
        """Trading ensembles must span t_1..t_10"""
        response = client.post("/trade", json={"paths": [[1.0, 2.0]] * 3, "observed": [1.0] * 10})
        assert response.status_code == 422


class TestRunsEndpoints:
    """Test read access to stored runs"""

    def test_stored_run(self, client, clean_store):
        """A stored run is listed, readable and deletable"""
        report = BacktestReport(engines=["LQC"], ledger=ProfitLedger(), scp_grid=[0.5],
                                scores=pd.DataFrame(columns=["engine", "date", "hour", "peak_flag",
                                                             "es", "dss", "vs1", "vs05"]),
                                metadata={"config_hash": "abc", "test_start": "2021-03-02", "test_days": 1})
        run_id = clean_store.store_run(report, out_dir="reports")

        runs = client.get("/runs").json()
        assert runs["total_count"] == 1
        assert runs["runs"][0]["id"] == run_id

        run = client.get(f"/runs/{run_id}").json()
        assert run["config_hash"] == "abc"
        assert [row["status"] for row in run["scores"]] == ["skipped", "skipped"]

        assert client.delete(f"/runs/{run_id}").status_code == 200
        assert client.get(f"/runs/{run_id}").status_code == 404

    def test_unknown_run(self, client, clean_store):
        """Unknown ids are 404"""
        assert client.get("/runs/12345").status_code == 404
        assert client.delete("/runs/12345").status_code == 404

    def test_statistics(self, client, clean_store):
        """Statistics of an empty store"""
        response = client.get("/statistics")
        assert response.status_code == 200
        assert response.json()["run_stats"] == {"total_runs": 0, "distinct_configs": 0, "best_majority_rtp": []}
