import os
from typing import Optional

import numpy as np

from data_model import Dataset, binary_schema, load_dataset, load_schema
from forest import Forest, Node, Tree, forest_from_dict, forest_to_dict, load_forest

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "fixtures")


def fixture(name: str) -> str:
    return os.path.join(FIXTURES, name)


def toy_data() -> Dataset:
    schema = load_schema(fixture("toy_schema.json"))
    return load_dataset(fixture("toy.csv"), schema)


def toy_forest() -> Forest:
    return load_forest(fixture("toy_forest.json"))


def random_binary_dataset(n: int, m: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 2, size=(n, m)).astype(float)
    labels = rng.integers(0, 2, size=n)
    if n > 1 and labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    # Sorted labels keep the training order equal to the class-block order.
    order = np.argsort(labels, kind="stable")
    return Dataset(binary_schema([f"f{i + 1}" for i in range(m)]), rows[order], labels[order])


def stump_forest(left_counts: list[tuple[int, int]], right_counts: list[tuple[int, int]], n: int, bagging: bool) -> Forest:
    """One single-split tree on f1 per (left, right) pair."""
    trees = []
    for left, right in zip(left_counts, right_counts):
        root = tuple(a + b for a, b in zip(left, right))
        trees.append(Tree((Node(0, root, 0, 0.5, 1, 2), Node(1, left), Node(2, right)), 0))
    return Forest(tuple(trees), binary_schema(["f1"]), n, bagging)


def move_one_example(forest: Forest) -> Optional[Forest]:
    """Moves one example between two leaves of the first tree; None when it has a single leaf."""
    doc = forest_to_dict(forest)
    nodes = doc["trees"][0]["nodes"]
    leaves = [n for n in nodes if n["feature"] == -1]
    if len(leaves) < 2:
        return None
    src = next(n for n in leaves if max(n["counts"]) > 0)
    dst = leaves[-1] if leaves[-1] is not src else leaves[0]
    c = int(np.argmax(src["counts"]))
    src["counts"][c] -= 1
    dst["counts"][c] += 1
    # Internal counts are re-derived from the leaves on load.
    for n in nodes:
        if n["feature"] != -1:
            n["counts"] = None
    return forest_from_dict(doc)
