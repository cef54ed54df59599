"""
Small CART random-forest trainer that keeps exact per-node class counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from data_model import Dataset
from forest import LEAF, Forest, Node, Tree

LOG = logging.getLogger(__name__)

# Relative tolerance when comparing Gini scores.
SCORE_TOL = 1e-12

MaxFeatures = Union[int, float, str, None]


@dataclass(frozen=True)
class TrainParams:
    n_trees: int
    max_depth: Optional[int] = None
    bootstrap: bool = True
    max_features: MaxFeatures = "sqrt"
    seed: int = 0
    min_samples_split: int = 2
    excluded_features: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "excluded_features", tuple(int(i) for i in self.excluded_features))
        if not isinstance(self.n_trees, int) or self.n_trees < 1:
            raise ValueError("n_trees must be an integer >= 1.")
        if self.max_depth is not None and (not isinstance(self.max_depth, int) or self.max_depth < 1):
            raise ValueError("max_depth must be None or an integer >= 1.")
        if not isinstance(self.min_samples_split, int) or self.min_samples_split < 1:
            raise ValueError("min_samples_split must be an integer >= 1.")
        mf = self.max_features
        if isinstance(mf, str):
            if mf != "sqrt":
                raise ValueError(f"Invalid max_features '{mf}'. Allowed strings: sqrt")
        elif isinstance(mf, bool):
            raise ValueError("max_features cannot be a boolean.")
        elif isinstance(mf, int):
            if mf < 1:
                raise ValueError("max_features must be >= 1.")
        elif isinstance(mf, float):
            if not 0.0 < mf <= 1.0:
                raise ValueError("A fractional max_features must lie in (0, 1].")
        elif mf is not None:
            raise ValueError(f"Invalid max_features {mf!r}.")

    def resolve_max_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf is None:
            k = n_features
        elif mf == "sqrt":
            k = math.ceil(math.sqrt(n_features))
        elif isinstance(mf, float):
            k = max(1, int(mf * n_features))
        else:
            k = int(mf)
        if not 1 <= k <= n_features:
            raise ValueError(f"max_features resolves to {k}, outside 1..{n_features}.")
        return k


def _draw_bootstrap(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.sort(rng.integers(0, n, size=n))


def bootstrap_sample(n: int, seed: int) -> np.ndarray:
    """n draws with replacement from 0..n-1, sorted."""
    if n < 1:
        raise ValueError("Bootstrap size must be >= 1.")
    return _draw_bootstrap(np.random.default_rng(seed), n)


@dataclass(frozen=True)
class _Split:
    score: float
    feature: int
    threshold: float

    def beats(self, other: Optional["_Split"]) -> bool:
        if other is None:
            return True
        tol = SCORE_TOL * max(1.0, abs(other.score))
        if self.score > other.score + tol:
            return True
        if self.score < other.score - tol:
            return False
        return (self.feature, self.threshold) < (other.feature, other.threshold)


def _purity_score(class_counts: np.ndarray) -> float:
    # Sum of c^2 / n; larger means purer. Weighted Gini = n - score.
    n = class_counts.sum()
    return float((class_counts.astype(float) ** 2).sum() / n) if n else 0.0


def best_split_for_feature(
    values: np.ndarray, labels: np.ndarray, weights: np.ndarray, n_classes: int, feature: int
) -> Optional[_Split]:
    """Best threshold of one feature, scored by weighted Gini (as sum of c^2/n per side)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    onehot = np.zeros((len(v), n_classes), dtype=np.int64)
    onehot[np.arange(len(v)), labels[order]] = weights[order]
    left = np.cumsum(onehot, axis=0)[:-1].astype(float)
    total = onehot.sum(axis=0).astype(float)
    right = total - left
    boundaries = np.flatnonzero(v[:-1] < v[1:])
    if boundaries.size == 0:
        return None
    left, right = left[boundaries], right[boundaries]
    n_left, n_right = left.sum(axis=1), right.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(n_left > 0, (left**2).sum(axis=1) / n_left, 0.0) + np.where(
            n_right > 0, (right**2).sum(axis=1) / n_right, 0.0
        )
    best: Optional[_Split] = None
    for j, b in enumerate(boundaries):
        cand = _Split(float(scores[j]), feature, float((v[b] + v[b + 1]) / 2.0))
        if cand.beats(best):
            best = cand
    return best


class _TreeBuilder:
    def __init__(self, dataset: Dataset, params: TrainParams, rng: np.random.Generator) -> None:
        self._x = dataset.rows
        self._y = dataset.labels
        self._n_classes = dataset.schema.n_classes
        self._params = params
        self._rng = rng
        excluded = set(params.excluded_features)
        self._allowed = np.array([i for i in range(dataset.n_attributes) if i not in excluded], dtype=np.int64)
        if self._allowed.size == 0:
            raise ValueError("Every feature is excluded; nothing to split on.")
        self._max_features = params.resolve_max_features(int(self._allowed.size))
        self._nodes: list[dict] = []

    def build(self, weights: np.ndarray) -> Tree:
        samples = np.flatnonzero(weights)
        self._grow(samples, weights, 0)
        nodes = tuple(
            Node(i, tuple(d["counts"]), d["feature"], d["threshold"], d["left"], d["right"])
            for i, d in enumerate(self._nodes)
        )
        return Tree(nodes, 0)

    def _grow(self, samples: np.ndarray, weights: np.ndarray, depth: int) -> int:
        node_id = len(self._nodes)
        counts = np.bincount(self._y[samples], weights=weights[samples], minlength=self._n_classes)
        counts = np.rint(counts).astype(np.int64)
        entry = {"counts": counts.tolist(), "feature": LEAF, "threshold": 0.0, "left": LEAF, "right": LEAF}
        self._nodes.append(entry)

        n = int(counts.sum())
        if (
            np.count_nonzero(counts) <= 1
            or (self._params.max_depth is not None and depth >= self._params.max_depth)
            or n < self._params.min_samples_split
        ):
            return node_id

        split = self._find_split(samples, weights)
        parent_score = _purity_score(counts)
        if split is None or split.score <= parent_score + SCORE_TOL * max(1.0, parent_score):
            return node_id

        go_left = self._x[samples, split.feature] <= split.threshold
        entry.update(feature=split.feature, threshold=split.threshold)
        entry["left"] = self._grow(samples[go_left], weights, depth + 1)
        entry["right"] = self._grow(samples[~go_left], weights, depth + 1)
        return node_id

    def _find_split(self, samples: np.ndarray, weights: np.ndarray) -> Optional[_Split]:
        best: Optional[_Split] = None
        scored = 0
        labels = self._y[samples]
        w = weights[samples]
        for f in self._rng.permutation(self._allowed):
            values = self._x[samples, f]
            if values.min() == values.max():
                continue
            cand = best_split_for_feature(values, labels, w, self._n_classes, int(f))
            scored += 1
            if cand is not None and cand.beats(best):
                best = cand
            if scored >= self._max_features:
                break
        return best


def train_forest(train: Dataset, params: TrainParams) -> Forest:
    if train.n_examples == 0:
        raise ValueError("Cannot train on an empty dataset.")
    n = train.n_examples
    if n > 1 and len(np.unique(train.labels)) < 2:
        raise ValueError(f"Training set of {n} examples holds a single class.")
    trees = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([params.seed, t])
        if params.bootstrap:
            weights = np.bincount(_draw_bootstrap(rng, n), minlength=n)
        else:
            weights = np.ones(n, dtype=np.int64)
        trees.append(_TreeBuilder(train, params, rng).build(weights))
    forest = Forest(tuple(trees), train.schema, n, params.bootstrap)
    LOG.info(
        "Trained %d trees on N=%d (bootstrap=%s, max_depth=%s): %d nodes total",
        params.n_trees,
        n,
        params.bootstrap,
        params.max_depth,
        sum(t.n_nodes for t in trees),
    )
    return forest
