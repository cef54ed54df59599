"""
Service layer: experiment configuration and the sweep harness.

A sweep trains one forest per cell, attacks it, scores the reconstruction
against the sampled training set and stores one `RunRecord` per cell.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import os
import sqlite3
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

import repositories as repo
from data_model import load_dataset, load_schema, sample_training_set, save_dataset
from evaluation import random_baseline, reconstruction_error
from events import SWEEP_CELL_DONE, EventBus, emit
from forest import accuracy, build_interval_tables
from recon import ReconProblem, ReconstructionError, known_from_dataset, pick_known_units, run_attack
from runs import CSV_COLUMNS, RunRecord, depth_label, parse_depth
from trainer import TrainParams, train_forest

LOG = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    schema: str
    n_examples: int
    seeds: tuple[int, ...]
    n_trees: tuple[int, ...]
    max_depths: tuple[Optional[int], ...] = (None,)
    bagging: bool = False
    encoding: str = "cp"
    b_max: int = 7
    time_limit: Optional[float] = None
    workers: int = 1
    cell_workers: int = 1
    out_dir: str = "sweep_out"
    class_column: str = "c"
    known_units: tuple[int, ...] = (0,)
    baseline_runs: int = 100
    sweep_name: str = "sweep"

    def __post_init__(self) -> None:
        for name in ("seeds", "n_trees", "max_depths", "known_units"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)) or not isinstance(value, Sequence):
                raise ConfigError(f"{name} must be a list.")
            if not value:
                raise ConfigError(f"{name} must not be empty.")
        try:
            object.__setattr__(self, "max_depths", tuple(parse_depth(d) for d in self.max_depths))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "n_trees", tuple(int(t) for t in self.n_trees))
        object.__setattr__(self, "known_units", tuple(int(k) for k in self.known_units))

        if not isinstance(self.n_examples, int) or self.n_examples < 1:
            raise ConfigError("n_examples must be an integer >= 1.")
        if any(t < 1 for t in self.n_trees):
            raise ConfigError("n_trees entries must be >= 1.")
        if any(k < 0 for k in self.known_units):
            raise ConfigError("known_units entries must be >= 0.")
        if self.encoding not in ("cp", "flow"):
            raise ConfigError(f"Invalid encoding '{self.encoding}'. Allowed: cp, flow")
        if not isinstance(self.b_max, int) or self.b_max < 0:
            raise ConfigError("b_max must be an integer >= 0.")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ConfigError("time_limit must be > 0 when given.")
        if self.workers < 1 or self.cell_workers < 1:
            raise ConfigError("workers and cell_workers must be >= 1.")
        if self.baseline_runs < 1:
            raise ConfigError("baseline_runs must be >= 1.")
        if not self.sweep_name.strip():
            raise ConfigError("sweep_name must be a non-empty string.")

    def check_paths(self) -> None:
        for name in ("dataset", "schema"):
            path = getattr(self, name)
            if not os.path.isfile(path):
                raise ConfigError(f"{name} file '{path}' does not exist.")

    def cells(self) -> list[tuple[int, int, Optional[int], int]]:
        """(seed, n_trees, max_depth, n_known) in grid order."""
        return [
            (seed, t, d, k)
            for t, d, k, seed in itertools.product(self.n_trees, self.max_depths, self.known_units, self.seeds)
        ]


def config_from_dict(doc: dict[str, Any], base_dir: str = ".") -> ExperimentConfig:
    """Keys mirror the dataclass fields; relative paths resolve against base_dir."""
    fields = dataclasses.fields(ExperimentConfig)
    unknown = sorted(set(doc) - {f.name for f in fields})
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
    missing = sorted(f.name for f in fields if f.default is dataclasses.MISSING and f.name not in doc)
    if missing:
        raise ConfigError(f"Missing configuration keys: {', '.join(missing)}")
    values = dict(doc)
    for name in ("dataset", "schema", "out_dir"):
        if name in values and not os.path.isabs(values[name]):
            values[name] = os.path.join(base_dir, values[name])
    try:
        return ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object.")
    return config_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def _cell_csv_path(config: ExperimentConfig, seed: int, n_trees: int, max_depth: Optional[int], n_known: int) -> str:
    name = f"seed{seed}_T{n_trees}_d{depth_label(max_depth)}_k{n_known}.csv"
    return os.path.join(config.out_dir, "reconstructions", name)


def execute_cell(config: ExperimentConfig, seed: int, n_trees: int, max_depth: Optional[int], n_known: int) -> RunRecord:
    """
    Runs one cell without touching the database: sample, train, attack, score.
    Module-level so process pools can pickle it.
    """
    schema = load_schema(config.schema)
    full = load_dataset(config.dataset, schema, config.class_column)
    train, holdout = sample_training_set(full, config.n_examples, seed)
    # Class-major order, so training row k is example k of the no-bagging models.
    train = train.subset(np.argsort(train.labels, kind="stable"))
    n_units = len(schema.units())
    if n_known >= n_units:
        raise ConfigError(f"Cannot reveal {n_known} of {n_units} original attributes and still score the rest.")

    params = TrainParams(n_trees=n_trees, max_depth=max_depth, bootstrap=config.bagging, seed=seed)
    forest = train_forest(train, params)
    intervals = build_interval_tables(forest)
    known_units = pick_known_units(schema, n_known, seed)
    scored = [u for u in range(n_units) if u not in known_units]
    problem = ReconProblem(
        forest,
        known_attributes=known_from_dataset(train, known_units),
        b_max=config.b_max,
        time_limit=config.time_limit,
        seed=seed,
        workers=config.workers,
        encoding=config.encoding,
    )
    record = dict(
        sweep_name=config.sweep_name,
        seed=seed,
        n_trees=n_trees,
        max_depth=max_depth,
        bagging=config.bagging,
        encoding=config.encoding,
        n_known=n_known,
        baseline_error=random_baseline(schema, train, config.baseline_runs, seed, intervals, scored),
        train_accuracy=accuracy(forest, train),
        test_accuracy=accuracy(forest, holdout) if holdout.n_examples else None,
    )
    try:
        outcome = run_attack(problem)
    except ReconstructionError as e:
        LOG.info("cell seed=%d T=%d depth=%s: %s", seed, n_trees, depth_label(max_depth), e)
        return RunRecord(id=None, status="infeasible", report={"message": str(e)}, **record)

    report = outcome.to_report()
    if outcome.dataset is None:
        return RunRecord(
            id=None,
            status=outcome.status.value,
            solve_seconds=outcome.seconds,
            b_max_used=outcome.b_max_used,
            report=report,
            **record,
        )
    matching = reconstruction_error(train, outcome.dataset, intervals, units=scored)
    path = _cell_csv_path(config, seed, n_trees, max_depth, n_known)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_dataset(outcome.dataset, path, config.class_column)
    report["decoded"] = path
    report["known_units"] = known_units
    return RunRecord(
        id=None,
        status="ok",
        error=matching.error,
        solve_seconds=outcome.seconds,
        b_max_used=outcome.b_max_used,
        report=report,
        **record,
    )


def summarize_runs(records: Sequence[RunRecord], n_seeds: int) -> list[dict[str, Any]]:
    """
    Mean and standard deviation of the error per (|T|, depth, known attributes).
    A group reports values only when at least min(3, n_seeds) runs completed.
    """
    needed = min(3, n_seeds)
    groups: dict[tuple[int, str, int], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.n_trees, depth_label(r.max_depth), r.n_known), []).append(r)
    out = []
    for (n_trees, depth, n_known), members in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][2], kv[0][1])):
        done = [r for r in members if r.completed]
        row: dict[str, Any] = {
            "n_trees": n_trees,
            "max_depth": depth,
            "n_known": n_known,
            "runs": len(members),
            "completed": len(done),
            "mean_error": None,
            "std_error": None,
            "mean_baseline_error": None,
        }
        if len(done) >= needed and done:
            errors = np.array([r.error for r in done], dtype=float)
            baselines = [r.baseline_error for r in done if r.baseline_error is not None]
            row["mean_error"] = float(errors.mean())
            row["std_error"] = float(errors.std())
            row["mean_baseline_error"] = float(np.mean(baselines)) if baselines else None
        out.append(row)
    return out


class ExperimentService:
    def __init__(self, conn: sqlite3.Connection, event_bus: Optional[EventBus] = None) -> None:
        # Service owns the connection; cells commit one at a time.
        self._conn = conn
        self._events = event_bus

    def _store(self, record: RunRecord) -> RunRecord:
        try:
            record.id = repo.insert_run(self._conn, record)
            self._conn.commit()
        except sqlite3.Error as e:
            self._conn.rollback()
            raise RuntimeError(f"Database error while storing run: {e}") from e
        LOG.info(
            "cell seed=%d T=%d depth=%s known=%d: %s error=%s",
            record.seed,
            record.n_trees,
            depth_label(record.max_depth),
            record.n_known,
            record.status,
            record.error,
        )
        emit(
            self._events,
            SWEEP_CELL_DONE,
            seed=record.seed,
            n_trees=record.n_trees,
            max_depth=depth_label(record.max_depth),
            n_known=record.n_known,
            status=record.status,
            error=record.error,
        )
        return record

    def find_cell(
        self, config: ExperimentConfig, seed: int, n_trees: int, max_depth: Optional[int], n_known: int
    ) -> Optional[RunRecord]:
        return repo.get_run(
            self._conn, config.sweep_name, seed, n_trees, max_depth, config.bagging, config.encoding, n_known
        )

    def run_cell(
        self, config: ExperimentConfig, seed: int, n_trees: int, max_depth: Optional[int], n_known: int = 0
    ) -> RunRecord:
        """Runs and stores one cell, or returns the stored record when it already ran."""
        existing = self.find_cell(config, seed, n_trees, max_depth, n_known)
        if existing is not None:
            LOG.info("cell seed=%d T=%d depth=%s known=%d already stored", seed, n_trees, depth_label(max_depth), n_known)
            return existing
        return self._store(execute_cell(config, seed, n_trees, max_depth, n_known))

    def run_sweep(self, config: ExperimentConfig) -> list[RunRecord]:
        config.check_paths()
        pending = [cell for cell in config.cells() if self.find_cell(config, *cell) is None]
        skipped = len(config.cells()) - len(pending)
        if skipped:
            LOG.info("resuming sweep '%s': %d cells already stored", config.sweep_name, skipped)
        if config.cell_workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=config.cell_workers) as pool:
                futures = [pool.submit(execute_cell, config, *cell) for cell in pending]
                # Stored from this thread only, one commit per finished cell.
                for future in as_completed(futures):
                    self._store(future.result())
        else:
            for cell in pending:
                self._store(execute_cell(config, *cell))
        return self.list_runs(config.sweep_name)

    def list_runs(self, sweep_name: str) -> list[RunRecord]:
        return repo.list_runs(self._conn, sweep_name)

    def reset_sweep(self, sweep_name: str) -> int:
        try:
            removed = repo.delete_sweep(self._conn, sweep_name)
            self._conn.commit()
        except sqlite3.Error as e:
            self._conn.rollback()
            raise RuntimeError(f"Database error while resetting sweep: {e}") from e
        return removed

    def export_csv(self, sweep_name: str, path: str) -> int:
        records = self.list_runs(sweep_name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for r in records:
                writer.writerow(r.to_csv_row())
        return len(records)
