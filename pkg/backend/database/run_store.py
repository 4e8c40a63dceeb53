"""
Run store for pathcast
Keeps a SQLite record of every backtest run: configuration hash, output
directory, strategy totals with RTP and the score table aggregates
"""

import json
import logging
import sqlite3
from pathlib import Path
from typing import Any, Dict, List, Optional

from backtest.reports import BacktestReport

logger = logging.getLogger(__name__)


class RunStore:
    """Manages SQLite storage of backtest runs"""

    def __init__(self, db_path: Optional[str] = None):
        """
        Initialize the store

        Args:
            db_path: Path to the SQLite file. If None, uses pathcast_runs.db in the backend directory
        """
        if db_path is None:
            db_path = Path(__file__).parent.parent / "pathcast_runs.db"
        self.db_path = str(db_path)
        self.connection = None

    def get_connection(self) -> sqlite3.Connection:
        """Get database connection with row factory"""
        if self.connection is None:
            self.connection = sqlite3.connect(self.db_path, check_same_thread=False)
            self.connection.row_factory = sqlite3.Row
            self.connection.execute("PRAGMA foreign_keys = ON")
        return self.connection

    def initialize_database(self):
        """Create tables if they don't exist"""
        conn = self.get_connection()
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                config_hash TEXT NOT NULL,
                data_hash TEXT,
                out_dir TEXT,
                engines TEXT NOT NULL,      -- JSON list
                test_start TEXT,
                test_days INTEGER,
                skipped_keys INTEGER DEFAULT 0,
                leakage_violations INTEGER DEFAULT 0,
                summary TEXT NOT NULL,      -- JSON body of run.json
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS strategy_totals (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL REFERENCES runs(id) ON DELETE CASCADE,
                strategy TEXT NOT NULL,
                total REAL NOT NULL,
                rtp REAL,
                markets INTEGER NOT NULL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS engine_scores (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL REFERENCES runs(id) ON DELETE CASCADE,
                engine TEXT NOT NULL,
                peak_flag TEXT NOT NULL,
                n_keys INTEGER NOT NULL,
                es REAL,
                dss REAL,
                vs1 REAL,
                vs05 REAL,
                status TEXT NOT NULL
            )
        """)

        conn.commit()
        logger.info(f"Run store ready at {self.db_path}")

    def store_run(self, report: BacktestReport, out_dir: Optional[str] = None) -> int:
        """
        Store a finished backtest

        Args:
            report: the backtest report
            out_dir: directory the report files were written to

        Returns:
            Run ID
        """
        conn = self.get_connection()
        cursor = conn.cursor()
        summary = report.summary()
        meta = report.metadata

        cursor.execute("""
            INSERT INTO runs (config_hash, data_hash, out_dir, engines, test_start, test_days,
                              skipped_keys, leakage_violations, summary)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """, (
            meta.get("config_hash", ""),
            meta.get("data_hash"),
            out_dir,
            json.dumps(report.engines),
            meta.get("test_start"),
            meta.get("test_days"),
            summary["skipped_keys"],
            summary["leakage_violations"],
            json.dumps(summary, sort_keys=True),
        ))
        run_id = cursor.lastrowid

        for strategy, totals in report.ledger.totals().items():
            cursor.execute("""
                INSERT INTO strategy_totals (run_id, strategy, total, rtp, markets)
                VALUES (?, ?, ?, ?, ?)
            """, (run_id, strategy, totals["total"], totals["rtp"], totals["markets"]))

        for row in summary["scores_table"]:
            cursor.execute("""
                INSERT INTO engine_scores (run_id, engine, peak_flag, n_keys, es, dss, vs1, vs05, status)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
            """, (run_id, row["engine"], row["peak_flag"], row["n_keys"], row["es"], row["dss"],
                  row["vs1"], row["vs05"], row["status"]))

        conn.commit()
        logger.info(f"Stored run {run_id} ({meta.get('config_hash', '')[:12]})")
        return run_id

    def list_runs(self) -> List[Dict[str, Any]]:
        """All runs, newest first, without their per-strategy detail"""
        cursor = self.get_connection().cursor()
        cursor.execute("""
            SELECT id, config_hash, out_dir, engines, test_start, test_days, skipped_keys,
                   leakage_violations, created_at
            FROM runs
            ORDER BY id DESC
        """)
        return [self._run_row(row) for row in cursor.fetchall()]

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        """One run with its strategy totals and score table"""
        cursor = self.get_connection().cursor()
        cursor.execute("SELECT * FROM runs WHERE id = ?", (run_id,))
        row = cursor.fetchone()
        if row is None:
            return None
        run = self._run_row(row)
        run["summary"] = json.loads(row["summary"])

        cursor.execute("""
            SELECT strategy, total, rtp, markets FROM strategy_totals
            WHERE run_id = ? ORDER BY strategy
        """, (run_id,))
        run["strategies"] = [dict(r) for r in cursor.fetchall()]

        cursor.execute("""
            SELECT engine, peak_flag, n_keys, es, dss, vs1, vs05, status FROM engine_scores
            WHERE run_id = ? ORDER BY engine, peak_flag
        """, (run_id,))
        run["scores"] = [dict(r) for r in cursor.fetchall()]
        return run

    @staticmethod
    def _run_row(row: sqlite3.Row) -> Dict[str, Any]:
        return {
            "id": row["id"],
            "config_hash": row["config_hash"],
            "out_dir": row["out_dir"],
            "engines": json.loads(row["engines"]),
            "test_start": row["test_start"],
            "test_days": row["test_days"],
            "skipped_keys": row["skipped_keys"],
            "leakage_violations": row["leakage_violations"],
            "created_at": row["created_at"],
        }

    def delete_run(self, run_id: int) -> bool:
        """Delete a run and its detail rows"""
        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.execute("DELETE FROM runs WHERE id = ?", (run_id,))
        conn.commit()
        return cursor.rowcount > 0

    def clear_all_data(self):
        """Clear all data from the store (useful for testing)"""
        conn = self.get_connection()
        cursor = conn.cursor()
        cursor.execute("DELETE FROM engine_scores")
        cursor.execute("DELETE FROM strategy_totals")
        cursor.execute("DELETE FROM runs")
        conn.commit()
        logger.info("All runs cleared")

    def get_statistics(self) -> Dict[str, Any]:
        """Run count and the best majority-vote RTP per engine"""
        cursor = self.get_connection().cursor()

        cursor.execute("SELECT COUNT(*) as count FROM runs")
        run_count = cursor.fetchone()["count"]

        cursor.execute("SELECT COUNT(DISTINCT config_hash) as count FROM runs")
        config_count = cursor.fetchone()["count"]

        cursor.execute("""
            SELECT strategy, MAX(rtp) as best_rtp, COUNT(*) as runs
            FROM strategy_totals
            WHERE strategy LIKE '%:majority' AND rtp IS NOT NULL
            GROUP BY strategy
            ORDER BY best_rtp DESC
        """)
        best = [{"strategy": row["strategy"], "best_rtp": row["best_rtp"], "runs": row["runs"]}
                for row in cursor.fetchall()]

        return {
            "total_runs": run_count,
            "distinct_configs": config_count,
            "best_majority_rtp": best,
        }

    def close(self):
        """Close database connection"""
        if self.connection:
            self.connection.close()
            self.connection = None
