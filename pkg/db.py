"""
SQLite run store for sweeps: one row per grid cell, keyed so a resumed sweep skips finished cells.
"""

import sqlite3


def get_connection(db_path: str, timeout: float = 30.0) -> sqlite3.Connection:
    """Opens the run store; repositories read columns of the returned rows by name."""
    conn = sqlite3.connect(db_path, timeout=timeout)
    conn.row_factory = sqlite3.Row
    if db_path != ":memory:":
        # A second sweep process may read the store while this one writes.
        conn.execute("PRAGMA journal_mode = WAL;")
    return conn


def init_db(conn: sqlite3.Connection) -> None:
    """Creates the runs table and its grid-order index; safe on an existing store."""
    conn.executescript(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id              INTEGER PRIMARY KEY AUTOINCREMENT,
            sweep_name      TEXT NOT NULL,
            seed            INTEGER NOT NULL,
            n_trees         INTEGER NOT NULL,
            max_depth       TEXT NOT NULL,
            bagging         INTEGER NOT NULL,
            encoding        TEXT NOT NULL,
            n_known         INTEGER NOT NULL,
            status          TEXT NOT NULL,
            error           REAL,
            baseline_error  REAL,
            solve_seconds   REAL NOT NULL DEFAULT 0,
            b_max_used      INTEGER,
            train_accuracy  REAL,
            test_accuracy   REAL,
            report          TEXT NOT NULL DEFAULT '{}',
            created_at      TEXT NOT NULL DEFAULT (datetime('now')),
            UNIQUE (sweep_name, seed, n_trees, max_depth, bagging, encoding, n_known)
        );

        -- Listing a sweep in grid order.
        CREATE INDEX IF NOT EXISTS idx_runs_sweep
            ON runs(sweep_name, n_trees, max_depth, n_known, seed);
        """
    )
    conn.commit()
