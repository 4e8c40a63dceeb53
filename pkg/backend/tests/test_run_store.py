"""
Tests for the SQLite run store
"""
import pytest
import numpy as np
import pandas as pd
from datetime import date
from pathlib import Path

from backtest.reports import BacktestReport, majority_strategy
from database.run_store import RunStore
from market_data.calendar import DeliveryKey
from market_data.frame import PricePath
from trading.ledger import ProfitLedger
from trading.strategies import naive_decisions, trade


def make_report(config_hash="abc123", majority_j=10):
    """Two markets traded by the naive strategies and an LQC majority vote"""
    ledger = ProfitLedger()
    markets = [
        PricePath(key=DeliveryKey(date(2021, 3, 2), 10), values=np.arange(1.0, 11.0), last_pre_vwap=20.0),
        PricePath(key=DeliveryKey(date(2021, 3, 2), 11), values=np.arange(10.0, 0.0, -1.0), last_pre_vwap=20.0),
    ]
    for path in markets:
        ledger.record_bounds(path)
        for decision in naive_decisions(path).values():
            ledger.add(decision)
        ledger.add(trade(path, majority_j, majority_strategy("LQC")))
    scores = pd.DataFrame([
        {"engine": "LQC", "date": "2021-03-02", "hour": 10, "peak_flag": "on", "es": 1.0, "dss": 2.0,
         "vs1": 3.0, "vs05": 4.0},
        {"engine": "LQC", "date": "2021-03-02", "hour": 11, "peak_flag": "on", "es": 3.0, "dss": float("nan"),
         "vs1": 5.0, "vs05": 6.0},
    ])
    return BacktestReport(engines=["LQC"], scores=scores, ledger=ledger, scp_grid=[0.5],
                          metadata={"config_hash": config_hash, "data_hash": "d" * 64,
                                    "test_start": "2021-03-02", "test_days": 1})


@pytest.fixture
def store(temp_dir):
    """Initialized store in a temporary file"""
    store = RunStore(str(Path(temp_dir) / "runs.db"))
    store.initialize_database()
    yield store
    store.close()


class TestRunStore:
    """Test storing and reading runs"""

    def test_store_and_read(self, store):
        """A stored run comes back with totals and scores"""
        run_id = store.store_run(make_report(), out_dir="reports/run1")
        run = store.get_run(run_id)
        assert run["config_hash"] == "abc123"
        assert run["engines"] == ["LQC"]
        assert run["out_dir"] == "reports/run1"
        assert run["test_start"] == "2021-03-02"
        strategies = {row["strategy"]: row for row in run["strategies"]}
        assert strategies["LQC:majority"]["total"] == pytest.approx(11.0)
        assert strategies["LQC:majority"]["rtp"] == pytest.approx(50.0)
        assert strategies["LQC:majority"]["markets"] == 2
        assert set(strategies) == {"LQC:majority", "naive_first", "naive_last", "naive_avg"}

    def test_score_table_rows(self, store):
        """Peak and off-peak rows are kept; missing means are NULL"""
        run = store.get_run(store.store_run(make_report()))
        rows = {row["peak_flag"]: row for row in run["scores"]}
        assert rows["on"]["n_keys"] == 2
        assert rows["on"]["es"] == pytest.approx(2.0)
        assert rows["on"]["status"] == "ok"
        assert rows["off"]["status"] == "skipped"
        assert rows["off"]["es"] is None

    def test_summary_round_trip(self, store):
        """The run.json summary is stored verbatim"""
        report = make_report()
        run = store.get_run(store.store_run(report))
        assert run["summary"] == report.summary()

    def test_list_newest_first(self, store):
        """Runs are listed newest first"""
        first = store.store_run(make_report("first"))
        second = store.store_run(make_report("second"))
        assert [run["id"] for run in store.list_runs()] == [second, first]

    def test_missing_run(self, store):
        """Unknown ids read as None"""
        assert store.get_run(999) is None
        assert store.delete_run(999) is False

    def test_delete_cascades(self, store):
        """Deleting a run removes its detail rows"""
        run_id = store.store_run(make_report())
        assert store.delete_run(run_id)
        assert store.get_run(run_id) is None
        cursor = store.get_connection().cursor()
        cursor.execute("SELECT COUNT(*) FROM strategy_totals WHERE run_id = ?", (run_id,))
        assert cursor.fetchone()[0] == 0

    def test_statistics(self, store):
        """Best majority-vote RTP per engine over all runs"""
        store.store_run(make_report("a", majority_j=10))
        store.store_run(make_report("a", majority_j=1))
        store.store_run(make_report("b", majority_j=5))
        stats = store.get_statistics()
        assert stats["total_runs"] == 3
        assert stats["distinct_configs"] == 2
        assert stats["best_majority_rtp"] == [{"strategy": "LQC:majority", "best_rtp": pytest.approx(50.0), "runs": 3}]

    def test_clear_all_data(self, store):
        """Clearing empties every table"""
        store.store_run(make_report())
        store.clear_all_data()
        assert store.list_runs() == []
        assert store.get_statistics()["total_runs"] == 0
