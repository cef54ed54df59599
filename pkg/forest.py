"""
Forest model with per-node class counts.

Splits follow `value <= threshold -> left`. Counts are exact integers; node ids
are list positions and the root is usually node 0.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from data_model import NUMERICAL, AttributeSchema, Dataset, binary_schema, schema_from_dict, schema_to_dict

LOG = logging.getLogger(__name__)

LEAF = -1


class ForestError(ValueError):
    """Malformed forest structure or a forest document that cannot be imported."""


@dataclass(frozen=True)
class Node:
    id: int
    counts: tuple[int, ...]
    feature: int = LEAF
    threshold: float = 0.0
    left: int = LEAF
    right: int = LEAF

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "threshold", float(self.threshold))
        if any(c < 0 for c in self.counts):
            raise ForestError(f"Node {self.id}: counts must be non-negative, got {list(self.counts)}.")
        if self.feature == LEAF:
            if self.left != LEAF or self.right != LEAF:
                raise ForestError(f"Node {self.id}: a leaf cannot have children.")
        else:
            if self.feature < 0:
                raise ForestError(f"Node {self.id}: invalid feature index {self.feature}.")
            if self.left < 0 or self.right < 0:
                raise ForestError(f"Node {self.id}: internal node needs two children.")
            if self.left == self.right:
                raise ForestError(f"Node {self.id}: children ids must be distinct.")
            if self.left == self.id or self.right == self.id:
                raise ForestError(f"Node {self.id}: self-loop.")

    @property
    def is_leaf(self) -> bool:
        return self.feature == LEAF

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class Tree:
    """
    A single rooted binary tree.

    Construction checks structure only. Count consistency is the job of
    `validate_forest`, so a tree with wrong counts can still be built and
    reported on.
    """

    nodes: tuple[Node, ...]
    root: int = 0
    parent: tuple[int, ...] = field(init=False, repr=False, compare=False)
    depth: tuple[int, ...] = field(init=False, repr=False, compare=False)
    depth_index: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)
    leaves: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        n = len(nodes)
        if n == 0:
            raise ForestError("A tree needs at least one node.")
        for i, node in enumerate(nodes):
            if node.id != i:
                raise ForestError(f"Node at position {i} has id {node.id}; ids must equal positions.")
        if not 0 <= self.root < n:
            raise ForestError(f"Root id {self.root} is outside the tree.")
        widths = {len(node.counts) for node in nodes}
        if len(widths) != 1:
            raise ForestError("All nodes of a tree must carry the same number of class counts.")

        parent = [LEAF] * n
        seen = [False] * n
        for node in nodes:
            if node.is_leaf:
                continue
            for child in (node.left, node.right):
                if child >= n:
                    raise ForestError(f"Node {node.id}: child {child} is outside the tree.")
                if child == self.root or parent[child] != LEAF:
                    raise ForestError(f"Node {child} has more than one parent.")
                parent[child] = node.id

        depth = [0] * n
        depth_index: dict[int, list[int]] = {}
        leaves: list[int] = []
        stack = [(self.root, 0)]
        while stack:
            v, d = stack.pop()
            if seen[v]:
                raise ForestError(f"Cycle through node {v}.")
            seen[v] = True
            depth[v] = d
            node = nodes[v]
            if node.is_leaf:
                leaves.append(v)
            else:
                depth_index.setdefault(d, []).append(v)
                stack.append((node.right, d + 1))
                stack.append((node.left, d + 1))
        if not all(seen):
            orphan = seen.index(False)
            raise ForestError(f"Node {orphan} is not reachable from the root.")

        object.__setattr__(self, "parent", tuple(parent))
        object.__setattr__(self, "depth", tuple(depth))
        object.__setattr__(self, "depth_index", {d: tuple(sorted(v)) for d, v in depth_index.items()})
        object.__setattr__(self, "leaves", tuple(leaves))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_classes(self) -> int:
        return len(self.nodes[0].counts)

    @property
    def max_depth(self) -> int:
        return max(self.depth[v] for v in self.leaves)

    def internal_nodes(self) -> list[int]:
        return [node.id for node in self.nodes if not node.is_leaf]

    def route(self, row: Sequence[float]) -> int:
        """Leaf reached by `row`."""
        v = self.root
        node = self.nodes[v]
        while not node.is_leaf:
            v = node.left if row[node.feature] <= node.threshold else node.right
            node = self.nodes[v]
        return v

    def path(self, node_id: int) -> list[int]:
        if not 0 <= node_id < self.n_nodes:
            raise ForestError(f"Unknown node id {node_id}.")
        path = [node_id]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        path.reverse()
        return path

    def subtree_leaves(self, node_id: int) -> list[int]:
        out: list[int] = []
        stack = [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            if node.is_leaf:
                out.append(node.id)
            else:
                stack.extend((node.right, node.left))
        return out


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    schema: AttributeSchema
    n_examples: int
    trained_with_bagging: bool = False
    counts_derived: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "counts_derived", tuple(self.counts_derived))
        if not self.trees:
            raise ForestError("A forest needs at least one tree.")
        if not isinstance(self.n_examples, int) or self.n_examples < 1:
            raise ForestError(f"n_examples must be a positive integer, got {self.n_examples!r}.")
        for t, tree in enumerate(self.trees):
            if tree.n_classes != self.schema.n_classes:
                raise ForestError(
                    f"Tree {t}: nodes carry {tree.n_classes} class counts, schema has {self.schema.n_classes} classes."
                )
            for node in tree.nodes:
                if not node.is_leaf and node.feature >= self.schema.n_attributes:
                    raise ForestError(f"Tree {t} node {node.id}: feature {node.feature} is not in the schema.")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_classes(self) -> int:
        return self.schema.n_classes

    def root_histograms(self) -> list[tuple[int, ...]]:
        return [tree.nodes[tree.root].counts for tree in self.trees]


@dataclass(frozen=True)
class SplitSets:
    positive: frozenset[tuple[int, float]] = frozenset()
    negative: frozenset[tuple[int, float]] = frozenset()

    def __post_init__(self) -> None:
        overlap = self.positive & self.negative
        if overlap:
            raise ForestError(f"Split sets overlap on {sorted(overlap)}.")

    def attributes(self) -> set[int]:
        return {i for i, _ in self.positive} | {i for i, _ in self.negative}


def derive_split_sets(tree: Tree, node_id: int) -> SplitSets:
    """Conditions forced along the path to `node_id`: left adds to negative, right to positive."""
    path = tree.path(node_id)
    positive: set[tuple[int, float]] = set()
    negative: set[tuple[int, float]] = set()
    for parent, child in zip(path, path[1:]):
        node = tree.nodes[parent]
        cond = (node.feature, node.threshold)
        if child == node.left:
            negative.add(cond)
        else:
            positive.add(cond)
    return SplitSets(frozenset(positive), frozenset(negative))


@dataclass(frozen=True)
class CountViolation:
    kind: str
    tree: int
    node: Optional[int]
    cls: Optional[int]
    detail: str


@dataclass
class ValidationReport:
    violations: list[CountViolation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.ok,
            "violations": [v.__dict__ for v in self.violations],
            "notes": list(self.notes),
        }


def validate_forest(forest: Forest) -> ValidationReport:
    report = ValidationReport()
    for t, tree in enumerate(forest.trees):
        for node in tree.nodes:
            if node.is_leaf:
                continue
            left, right = tree.nodes[node.left], tree.nodes[node.right]
            for c in range(forest.n_classes):
                if node.counts[c] != left.counts[c] + right.counts[c]:
                    report.violations.append(
                        CountViolation(
                            "parent-sum",
                            t,
                            node.id,
                            c,
                            f"tree {t} node {node.id} class {c}: {node.counts[c]} != "
                            f"{left.counts[c]} + {right.counts[c]}",
                        )
                    )
        total = sum(tree.nodes[v].total for v in tree.leaves)
        if total != forest.n_examples:
            report.violations.append(
                CountViolation(
                    "leaf-total", t, None, None, f"tree {t}: leaf counts sum to {total}, expected N={forest.n_examples}"
                )
            )
    for t in forest.counts_derived:
        report.notes.append(f"tree {t}: internal counts derived from leaf counts")
    return report


def recount(
    tree: Tree,
    rows: np.ndarray,
    labels: Sequence[int],
    multiplicities: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Per-node class counts obtained by routing a (multi)set of rows."""
    counts = np.zeros((tree.n_nodes, tree.n_classes), dtype=np.int64)
    for k, row in enumerate(rows):
        m = 1 if multiplicities is None else int(multiplicities[k])
        if m == 0:
            continue
        for v in tree.path(tree.route(row)):
            counts[v, int(labels[k])] += m
    return counts


def tree_counts(tree: Tree) -> np.ndarray:
    return np.array([node.counts for node in tree.nodes], dtype=np.int64)


def classify(forest: Forest, row: Sequence[float]) -> int:
    votes = np.zeros(forest.n_classes, dtype=np.int64)
    for tree in forest.trees:
        leaf = tree.nodes[tree.route(row)]
        votes[int(np.argmax(leaf.counts))] += 1
    return int(np.argmax(votes))


def accuracy(forest: Forest, dataset: Dataset) -> float:
    if dataset.n_examples == 0:
        return float("nan")
    hits = sum(classify(forest, row) == label for row, label in zip(dataset.rows, dataset.labels))
    return hits / dataset.n_examples


def _derive_internal_counts(nodes: list[dict[str, Any]], root: int) -> None:
    # Post-order fill of missing internal counts; supplied counts are kept for validate_forest.
    order: list[int] = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        node = nodes[v]
        if int(node.get("feature", LEAF)) != LEAF:
            stack.extend((int(node["left"]), int(node["right"])))
    for v in reversed(order):
        node = nodes[v]
        if int(node.get("feature", LEAF)) == LEAF:
            if node.get("counts") is None:
                raise ForestError(f"Leaf {v} has no counts.")
            continue
        if node.get("counts") is not None:
            continue
        left, right = nodes[int(node["left"])]["counts"], nodes[int(node["right"])]["counts"]
        node["counts"] = [a + b for a, b in zip(left, right)]


def _exact_counts(values: Iterable[Any], where: str) -> tuple[int, ...]:
    out = []
    for value in values:
        v = float(value)
        if not math.isfinite(v) or not v.is_integer():
            raise ForestError(f"{where}: count {value!r} is not an exact integer.")
        out.append(int(v))
    return tuple(out)


def _resolve_schema(doc: dict[str, Any], schema: Optional[AttributeSchema], n_features: int, n_classes: int) -> AttributeSchema:
    if schema is not None:
        return schema
    if "schema" in doc:
        return schema_from_dict(doc["schema"])
    m = max(int(doc.get("n_attributes", 0)), n_features, 1)
    return binary_schema([f"f{i + 1}" for i in range(m)], max(n_classes, 2))


def forest_to_dict(forest: Forest) -> dict[str, Any]:
    trees = []
    for tree in forest.trees:
        nodes = []
        for node in tree.nodes:
            entry: dict[str, Any] = {"id": node.id, "feature": node.feature, "counts": list(node.counts)}
            if not node.is_leaf:
                entry.update(threshold=node.threshold, left=node.left, right=node.right)
            nodes.append(entry)
        trees.append({"root": tree.root, "nodes": nodes})
    return {
        "n_examples": forest.n_examples,
        "bagging": forest.trained_with_bagging,
        "schema": schema_to_dict(forest.schema),
        "trees": trees,
    }


def forest_from_dict(doc: dict[str, Any], schema: Optional[AttributeSchema] = None) -> Forest:
    try:
        raw_trees = doc["trees"]
        n_examples = int(doc["n_examples"])
        derived: list[int] = []
        trees: list[Tree] = []
        max_feature = -1
        for t, raw in enumerate(raw_trees):
            root = int(raw.get("root", 0))
            nodes_doc = [dict(n) for n in raw["nodes"]]
            if any(n.get("counts") is None for n in nodes_doc):
                _derive_internal_counts(nodes_doc, root)
                derived.append(t)
            nodes = []
            for pos, n in enumerate(nodes_doc):
                feature = int(n.get("feature", LEAF))
                max_feature = max(max_feature, feature)
                nodes.append(
                    Node(
                        id=int(n.get("id", pos)),
                        counts=_exact_counts(n["counts"], f"tree {t} node {pos}"),
                        feature=feature,
                        threshold=float(n.get("threshold", 0.0)) if feature != LEAF else 0.0,
                        left=int(n.get("left", LEAF)) if feature != LEAF else LEAF,
                        right=int(n.get("right", LEAF)) if feature != LEAF else LEAF,
                    )
                )
            trees.append(Tree(tuple(nodes), root))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ForestError):
            raise
        raise ForestError(f"Malformed forest document: {e}") from e
    resolved = _resolve_schema(doc, schema, max_feature + 1, trees[0].n_classes if trees else 2)
    return Forest(tuple(trees), resolved, n_examples, bool(doc.get("bagging", False)), tuple(derived))


def save_forest(forest: Forest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest), fh, indent=1)


def load_forest(path: str, schema: Optional[AttributeSchema] = None) -> Forest:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ForestError(f"{path}: not valid JSON ({e})") from e
    forest = forest_from_dict(doc, schema)
    LOG.debug("Loaded forest %s: %d trees, N=%d", path, forest.n_trees, forest.n_examples)
    return forest


def import_array_format(doc: dict[str, Any], schema: Optional[AttributeSchema] = None) -> Forest:
    """
    Builds a forest from per-tree parallel arrays: children_left,
    children_right, feature, threshold and value (per-node class counts).

    Leaves have child id -1. The import fails on inconsistent counts instead of
    repairing them.
    """
    try:
        raw_trees = doc["trees"]
    except (KeyError, TypeError) as e:
        raise ForestError("Array document needs a 'trees' list.") from e
    if not raw_trees:
        raise ForestError("Array document has no trees.")

    trees: list[Tree] = []
    totals: list[int] = []
    max_feature = -1
    for t, raw in enumerate(raw_trees):
        try:
            cl = [int(v) for v in raw["children_left"]]
            cr = [int(v) for v in raw["children_right"]]
            feat = [int(v) for v in raw["feature"]]
            thr = [float(v) for v in raw["threshold"]]
            value = raw["value"]
        except (KeyError, TypeError, ValueError) as e:
            raise ForestError(f"Tree {t}: malformed arrays ({e}).") from e
        n = len(cl)
        if not n or any(len(a) != n for a in (cr, feat, thr, value)):
            raise ForestError(f"Tree {t}: parallel arrays must be non-empty and of equal length.")
        nodes = []
        for i in range(n):
            if cl[i] == i or cr[i] == i:
                raise ForestError(f"Tree {t} node {i}: self-loop.")
            if (cl[i] == LEAF) != (cr[i] == LEAF):
                raise ForestError(f"Tree {t} node {i}: exactly one child is -1.")
            counts = _exact_counts(np.ravel(value[i]).tolist(), f"tree {t} node {i}")
            if cl[i] == LEAF:
                nodes.append(Node(i, counts))
            else:
                max_feature = max(max_feature, feat[i])
                nodes.append(Node(i, counts, feat[i], thr[i], cl[i], cr[i]))
        tree = Tree(tuple(nodes), 0)
        trees.append(tree)
        totals.append(sum(tree.nodes[v].total for v in tree.leaves))

    n_examples = int(doc.get("n_examples", totals[0]))
    mismatched = [t for t, total in enumerate(totals) if total != n_examples]
    if mismatched:
        raise ForestError(f"N mismatch across trees: leaf totals {totals}, expected {n_examples}.")
    resolved = _resolve_schema(doc, schema, max_feature + 1, trees[0].n_classes)
    forest = Forest(tuple(trees), resolved, n_examples, bool(doc.get("bagging", False)))
    report = validate_forest(forest)
    if not report.ok:
        raise ForestError(f"Inconsistent counts: {report.violations[0].detail}")
    return forest


def export_array_format(forest: Forest) -> dict[str, Any]:
    trees = []
    for tree in forest.trees:
        if tree.root != 0:
            raise ForestError("Array format needs the root at node 0.")
        trees.append(
            {
                "children_left": [n.left for n in tree.nodes],
                "children_right": [n.right for n in tree.nodes],
                "feature": [n.feature if not n.is_leaf else -2 for n in tree.nodes],
                "threshold": [n.threshold if not n.is_leaf else -2.0 for n in tree.nodes],
                "value": [list(n.counts) for n in tree.nodes],
            }
        )
    return {
        "n_examples": forest.n_examples,
        "bagging": forest.trained_with_bagging,
        "schema": schema_to_dict(forest.schema),
        "trees": trees,
    }


@dataclass(frozen=True)
class IntervalTable:
    """
    Split values per numerical attribute and the reconstruction intervals
    they induce. Interval j of attribute i is (bounds[j], bounds[j + 1]].
    """

    split_values: dict[int, tuple[float, ...]]
    bounds: dict[int, tuple[Optional[float], Optional[float]]]

    @property
    def attributes(self) -> list[int]:
        return sorted(self.split_values)

    def __contains__(self, i: int) -> bool:
        return i in self.split_values

    def __len__(self) -> int:
        return len(self.split_values)

    def n_intervals(self, i: int) -> int:
        return len(self.split_values[i]) + 1

    def interval_bounds(self, i: int) -> tuple[float, ...]:
        lo, hi = self.bounds[i]
        return (-math.inf if lo is None else lo,) + self.split_values[i] + (math.inf if hi is None else hi,)

    def interval_index(self, i: int, value: float) -> int:
        return bisect.bisect_left(self.split_values[i], value)

    def cut(self, i: int, threshold: float) -> int:
        """Index a of the split value, so `value <= threshold` iff interval index <= a."""
        try:
            return self.split_values[i].index(threshold)
        except ValueError:
            raise ForestError(f"{threshold} is not a split value of attribute {i}.") from None

    def midpoint(self, i: int, j: int) -> float:
        bounds = self.interval_bounds(i)
        lo, hi = bounds[j], bounds[j + 1]
        if math.isinf(lo) and math.isinf(hi):
            return 0.0
        if math.isinf(hi):
            return lo + 1.0
        if math.isinf(lo):
            return hi - 1.0
        return (lo + hi) / 2.0


def build_interval_tables(forest: Forest) -> IntervalTable:
    splits: dict[int, set[float]] = {
        i: set() for i, a in enumerate(forest.schema.attributes) if a.kind.kind == NUMERICAL
    }
    for tree in forest.trees:
        for node in tree.nodes:
            if not node.is_leaf and node.feature in splits:
                splits[node.feature].add(node.threshold)
    return IntervalTable(
        {i: tuple(sorted(values)) for i, values in splits.items()},
        {i: (forest.schema.kind(i).lower_bound, forest.schema.kind(i).upper_bound) for i in splits},
    )
