"""
Reconstruction quality: align reconstructed rows to original rows with a
minimum-cost matching, then count mismatching original attributes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from data_model import NUMERICAL, ORDINAL, AttributeSchema, Dataset
from forest import IntervalTable

LOG = logging.getLogger(__name__)

# Reduced costs within this (relative) distance of zero count as tight.
TIGHT_TOL = 1e-9


def _check_compatible(orig: Dataset, recon: Dataset) -> None:
    if orig.schema.names != recon.schema.names:
        raise ValueError("Original and reconstruction use different schemas.")
    if orig.n_examples != recon.n_examples:
        raise ValueError(f"Original has {orig.n_examples} rows, reconstruction {recon.n_examples}.")


def position_matrix(dataset: Dataset, intervals: Optional[IntervalTable] = None) -> np.ndarray:
    """Rows as discrete positions: 0/1, ordinal domain index or numerical interval index."""
    schema = dataset.schema
    out = np.zeros(dataset.rows.shape, dtype=np.int64)
    for i, attr in enumerate(schema.attributes):
        column = dataset.rows[:, i]
        if attr.kind.is_boolean:
            out[:, i] = column.astype(np.int64)
        elif attr.kind.kind == ORDINAL:
            domain = np.asarray(attr.kind.domain)
            out[:, i] = np.searchsorted(domain, column)
        else:
            if intervals is None or i not in intervals:
                raise ValueError(f"Numerical attribute '{attr.name}' needs an interval table.")
            out[:, i] = np.searchsorted(np.asarray(intervals.split_values[i]), column, side="left")
    return out


def distance_matrix(orig: Dataset, recon: Dataset, intervals: Optional[IntervalTable] = None) -> np.ndarray:
    """Entry (a, b): Manhattan distance between original row a and reconstructed row b."""
    _check_compatible(orig, recon)
    po = position_matrix(orig, intervals)
    pr = position_matrix(recon, intervals)
    return np.abs(po[:, None, :] - pr[None, :, :]).sum(axis=2)


def _dual_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Shortest augmenting paths with row/column potentials. Returns the
    row -> column assignment and the final potentials u, v with
    cost[i, j] - u[i] - v[j] >= 0, equal to 0 on assigned pairs.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: 1-based row holding column j, 0 if free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            held = np.flatnonzero(used)
            u[owner[held]] += delta
            v[held] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[owner[j] - 1] = j - 1
    return assignment, u[1:], v[1:]


def _reroute(
    tight: np.ndarray, match: list[int], row_of: list[int], start: int, target: int, blocked: int, first_free_row: int
) -> bool:
    """
    Gives row `start` a new tight column along an alternating path that ends
    at column `target`, using rows >= first_free_row and never column
    `blocked`. Applies the path and returns True when one exists.
    """
    prev: dict[int, int] = {}
    seen = {blocked}
    frontier = [start]
    while frontier:
        nxt = []
        for r in frontier:
            for c in np.flatnonzero(tight[r]):
                c = int(c)
                if c in seen:
                    continue
                holder = row_of[c]
                if c != target and holder < first_free_row:
                    continue
                seen.add(c)
                prev[c] = r
                if c == target:
                    while True:
                        r = prev[c]
                        old = match[r]
                        match[r] = c
                        row_of[c] = r
                        if r == start:
                            return True
                        c = old
                nxt.append(holder)
        frontier = nxt
    return False


def optimal_matching(matrix: Any) -> tuple[list[int], float]:
    """
    Minimum-cost perfect matching of a square non-negative matrix, as the
    row -> column permutation and its cost. Among optimal permutations the
    lexicographically smallest is returned.
    """
    cost = np.asarray(matrix, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"Matching needs a square matrix, got shape {cost.shape}.")
    n = cost.shape[0]
    if n == 0:
        return [], 0.0
    if not np.isfinite(cost).all():
        raise ValueError("Matching costs must be finite.")
    if (cost < 0).any():
        raise ValueError("Matching costs must be non-negative.")

    assignment, u, v = _dual_assignment(cost)
    reduced = cost - u[:, None] - v[None, :]
    tol = TIGHT_TOL * max(1.0, float(np.abs(cost).max()))
    # Every optimal assignment uses tight pairs only.
    tight = np.abs(reduced) <= tol

    match = [int(c) for c in assignment]
    row_of = [0] * n
    for r, c in enumerate(match):
        row_of[c] = r
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            j = int(j)
            if j >= match[i]:
                break
            if row_of[j] < i:
                continue
            if _reroute(tight, match, row_of, row_of[j], match[i], j, i + 1):
                match[i] = j
                row_of[j] = i
                break
    total = float(sum(cost[r, match[r]] for r in range(n)))
    return match, total


@dataclass
class MatchingReport:
    """permutation[b] is the original row matched to reconstructed row b."""

    permutation: list[int]
    per_pair_error: list[float]
    error: float
    cost: float
    baseline_error: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": self.error,
            "baseline_error": self.baseline_error,
            "cost": self.cost,
            "permutation": list(self.permutation),
            "per_pair_error": list(self.per_pair_error),
        }


def _unit_mismatches(po: np.ndarray, pr: np.ndarray, units: Sequence[tuple[int, ...]]) -> np.ndarray:
    # One column per unit; a group mismatches iff any member differs.
    diff = po != pr
    return np.stack([diff[:, list(unit)].any(axis=1) for unit in units], axis=1)


def reconstruction_error(
    orig: Dataset,
    recon: Dataset,
    intervals: Optional[IntervalTable] = None,
    units: Optional[Sequence[int]] = None,
    permutation: Optional[Sequence[int]] = None,
) -> MatchingReport:
    """
    Matches on all attributes, then scores the fraction of original attributes
    (one-hot groups once) that differ. `units` restricts the score to some
    original attributes; `permutation` fixes the alignment instead of matching.
    """
    _check_compatible(orig, recon)
    n = orig.n_examples
    all_units = orig.schema.units()
    if units is None:
        chosen = all_units
    else:
        for u in units:
            if not 0 <= u < len(all_units):
                raise ValueError(f"Unknown attribute unit {u}.")
        chosen = [all_units[u] for u in sorted(set(units))]
    if not chosen:
        raise ValueError("No attributes left to score.")

    po = position_matrix(orig, intervals)
    pr = position_matrix(recon, intervals)
    matrix = np.abs(po[:, None, :] - pr[None, :, :]).sum(axis=2)
    if permutation is None:
        orig_to_recon, cost = optimal_matching(matrix)
        perm = [0] * n
        for a, b in enumerate(orig_to_recon):
            perm[b] = a
    else:
        perm = [int(a) for a in permutation]
        if sorted(perm) != list(range(n)):
            raise ValueError("permutation must be a bijection on the example indices.")
        cost = float(sum(matrix[perm[b], b] for b in range(n)))

    mismatches = _unit_mismatches(po[perm], pr, chosen)
    per_pair = mismatches.mean(axis=1)
    error = float(per_pair.mean()) if n else 0.0
    LOG.debug("reconstruction error %.4f over %d rows and %d attributes", error, n, len(chosen))
    return MatchingReport(perm, [float(e) for e in per_pair], error, float(cost))


def random_guess(
    schema: AttributeSchema,
    n: int,
    rng: np.random.Generator,
    intervals: Optional[IntervalTable] = None,
    labels: Optional[np.ndarray] = None,
) -> Dataset:
    """Uniform guess per attribute, one uniform category per one-hot group."""
    rows = np.zeros((n, schema.n_attributes), dtype=float)
    for i, attr in enumerate(schema.attributes):
        if attr.kind.is_boolean and schema.group_of(i) is None:
            rows[:, i] = rng.integers(0, 2, size=n)
        elif attr.kind.kind == ORDINAL:
            rows[:, i] = np.asarray(attr.kind.domain)[rng.integers(0, len(attr.kind.domain), size=n)]
        elif attr.kind.kind == NUMERICAL:
            if intervals is None or i not in intervals:
                raise ValueError(f"Numerical attribute '{attr.name}' needs an interval table.")
            picks = rng.integers(0, intervals.n_intervals(i), size=n)
            rows[:, i] = [intervals.midpoint(i, int(j)) for j in picks]
    for group in schema.groups:
        picks = rng.integers(0, len(group), size=n)
        rows[np.arange(n), np.asarray(group)[picks]] = 1.0
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    return Dataset(schema, rows, labels)


def random_baseline(
    schema: AttributeSchema,
    orig: Dataset,
    runs: int,
    seed: int,
    intervals: Optional[IntervalTable] = None,
    units: Optional[Sequence[int]] = None,
) -> float:
    """Mean matched error of uniform random guesses; run r draws from seed sequence (seed, r)."""
    if runs < 1:
        raise ValueError("runs must be >= 1.")
    errors = []
    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        guess = random_guess(schema, orig.n_examples, rng, intervals, orig.labels)
        errors.append(reconstruction_error(orig, guess, intervals, units).error)
    mean = float(np.mean(errors))
    LOG.info("random baseline over %d runs: %.4f", runs, mean)
    return mean


def write_pairs_csv(report: MatchingReport, orig: Dataset, recon: Dataset, path: str) -> None:
    names = orig.schema.names
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = ["recon_index", "orig_index", "error"]
        writer.writerow(header + [f"orig_{n}" for n in names] + [f"recon_{n}" for n in names])
        for b, a in enumerate(report.permutation):
            writer.writerow(
                [b, a, report.per_pair_error[b]]
                + [_cell(v) for v in orig.rows[a]]
                + [_cell(v) for v in recon.rows[b]]
            )


def _cell(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))
