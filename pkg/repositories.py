"""
Repository layer

Keeps SQL for the `runs` table out of the service and CLI code.
"""

import json
import sqlite3
from typing import Optional

from runs import RunRecord, depth_label, parse_depth

_COLUMNS = (
    "id, sweep_name, seed, n_trees, max_depth, bagging, encoding, n_known, status, error, "
    "baseline_error, solve_seconds, b_max_used, train_accuracy, test_accuracy, report"
)


def _to_record(row: sqlite3.Row) -> RunRecord:
    return RunRecord(
        id=int(row["id"]),
        sweep_name=str(row["sweep_name"]),
        seed=int(row["seed"]),
        n_trees=int(row["n_trees"]),
        max_depth=parse_depth(row["max_depth"]),
        bagging=bool(row["bagging"]),
        encoding=str(row["encoding"]),
        n_known=int(row["n_known"]),
        status=str(row["status"]),
        error=row["error"],
        baseline_error=row["baseline_error"],
        solve_seconds=float(row["solve_seconds"]),
        b_max_used=row["b_max_used"],
        train_accuracy=row["train_accuracy"],
        test_accuracy=row["test_accuracy"],
        report=json.loads(row["report"]),
    )


def insert_run(conn: sqlite3.Connection, record: RunRecord) -> int:
    # Parameterised query; the UNIQUE cell key rejects a second row for the same cell.
    cur = conn.execute(
        """
        INSERT INTO runs (sweep_name, seed, n_trees, max_depth, bagging, encoding, n_known, status, error,
                          baseline_error, solve_seconds, b_max_used, train_accuracy, test_accuracy, report)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (
            record.sweep_name,
            record.seed,
            record.n_trees,
            depth_label(record.max_depth),
            int(record.bagging),
            record.encoding,
            record.n_known,
            record.status,
            record.error,
            record.baseline_error,
            record.solve_seconds,
            record.b_max_used,
            record.train_accuracy,
            record.test_accuracy,
            json.dumps(record.report),
        ),
    )
    if cur.lastrowid is None:
        raise RuntimeError("Failed to store run: no rowid returned.")
    return int(cur.lastrowid)


def get_run(
    conn: sqlite3.Connection,
    sweep_name: str,
    seed: int,
    n_trees: int,
    max_depth: Optional[int],
    bagging: bool,
    encoding: str,
    n_known: int,
) -> Optional[RunRecord]:
    row = conn.execute(
        f"""
        SELECT {_COLUMNS} FROM runs
        WHERE sweep_name = ? AND seed = ? AND n_trees = ? AND max_depth = ? AND bagging = ?
              AND encoding = ? AND n_known = ?
        """,
        (sweep_name, seed, n_trees, depth_label(max_depth), int(bagging), encoding, n_known),
    ).fetchone()
    if row is None:
        return None
    return _to_record(row)


def list_runs(conn: sqlite3.Connection, sweep_name: str) -> list[RunRecord]:
    # Grid order: |T|, depth, known attributes, then seed.
    rows = conn.execute(
        f"""
        SELECT {_COLUMNS} FROM runs
        WHERE sweep_name = ?
        ORDER BY n_trees ASC, max_depth ASC, n_known ASC, seed ASC, id ASC
        """,
        (sweep_name,),
    ).fetchall()
    return [_to_record(r) for r in rows]


def delete_sweep(conn: sqlite3.Connection, sweep_name: str) -> int:
    cur = conn.execute("DELETE FROM runs WHERE sweep_name = ?", (sweep_name,))
    return int(cur.rowcount)
