"""
Attribute schemas, datasets and their CSV/JSON I/O.

A dataset is an N x M value table plus class labels. Binary and one-hot
member cells hold 0/1, ordinal cells hold a domain value and numerical cells
hold a real.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

LOG = logging.getLogger(__name__)

BINARY = "binary"
ONEHOT = "onehot"
ORDINAL = "ordinal"
NUMERICAL = "numerical"


class DatasetError(ValueError):
    """Raised when a dataset file or table does not fit its schema."""


class OneHotViolation(DatasetError):
    """A row whose one-hot group does not have exactly one member set."""

    def __init__(self, row: int, group: int, members: Sequence[int]) -> None:
        super().__init__(
            f"Row {row}: one-hot group {group} (attributes {list(members)}) must have exactly one 1."
        )
        self.row = row
        self.group = group


@dataclass(frozen=True)
class AttributeKind:
    """Kind tag plus the parameters that kind needs."""

    allowed_kinds = (BINARY, ONEHOT, ORDINAL, NUMERICAL)

    kind: str
    group_id: Optional[int] = None
    domain: tuple[int, ...] = ()
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in self.allowed_kinds:
            raise ValueError(f"Invalid attribute kind '{self.kind}'. Allowed: {', '.join(self.allowed_kinds)}")
        if self.kind == ONEHOT and (not isinstance(self.group_id, int) or self.group_id < 0):
            raise ValueError("One-hot members need a group_id >= 0.")
        if self.kind == ORDINAL:
            if not self.domain:
                raise ValueError("Ordinal domain must be non-empty.")
            if any(b <= a for a, b in zip(self.domain, self.domain[1:])):
                raise ValueError(f"Ordinal domain must be strictly increasing, got {list(self.domain)}.")
        if (
            self.kind == NUMERICAL
            and self.lower_bound is not None
            and self.upper_bound is not None
            and not self.lower_bound < self.upper_bound
        ):
            raise ValueError(f"Numerical bounds must satisfy lower < upper, got {self.lower_bound} >= {self.upper_bound}.")

    @classmethod
    def binary(cls) -> "AttributeKind":
        return cls(BINARY)

    @classmethod
    def one_hot(cls, group_id: int) -> "AttributeKind":
        return cls(ONEHOT, group_id=group_id)

    @classmethod
    def ordinal(cls, domain: Iterable[int]) -> "AttributeKind":
        return cls(ORDINAL, domain=tuple(int(v) for v in domain))

    @classmethod
    def numerical(cls, lower: Optional[float] = None, upper: Optional[float] = None) -> "AttributeKind":
        return cls(
            NUMERICAL,
            lower_bound=None if lower is None else float(lower),
            upper_bound=None if upper is None else float(upper),
        )

    @property
    def is_boolean(self) -> bool:
        return self.kind in (BINARY, ONEHOT)


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: AttributeKind

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValueError("Attribute name must be a non-empty string.")


@dataclass(frozen=True)
class AttributeSchema:
    """
    Ordered attributes, the one-hot groups over them, and the class count.

    `groups[g]` lists the attribute indices of one-hot group g.
    """

    attributes: tuple[Attribute, ...]
    groups: tuple[tuple[int, ...], ...] = ()
    n_classes: int = 2
    _group_of: dict[int, int] = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))
        if len(self.attributes) < 1:
            raise ValueError("A schema needs at least one attribute.")
        if not isinstance(self.n_classes, int) or self.n_classes < 2:
            raise ValueError("n_classes must be an integer >= 2.")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("Attribute names must be unique.")

        group_of: dict[int, int] = {}
        for g, members in enumerate(self.groups):
            if len(members) < 2:
                raise ValueError(f"One-hot group {g} must have at least 2 members.")
            for i in members:
                if not 0 <= i < len(self.attributes):
                    raise ValueError(f"One-hot group {g} references unknown attribute {i}.")
                if i in group_of:
                    raise ValueError(f"Attribute {i} appears in more than one one-hot group.")
                kind = self.attributes[i].kind
                if kind.kind != ONEHOT or kind.group_id != g:
                    raise ValueError(f"Attribute {i} is in group {g} but is not declared as its one-hot member.")
                group_of[i] = g
        for i, attr in enumerate(self.attributes):
            if attr.kind.kind == ONEHOT and i not in group_of:
                raise ValueError(f"One-hot attribute '{attr.name}' is not listed in its group.")
        object.__setattr__(self, "_group_of", group_of)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def kind(self, i: int) -> AttributeKind:
        return self.attributes[i].kind

    def index(self, name: str) -> int:
        for i, attr in enumerate(self.attributes):
            if attr.name == name:
                return i
        raise KeyError(f"Unknown attribute '{name}'.")

    def group_of(self, i: int) -> Optional[int]:
        return self._group_of.get(i)

    def units(self) -> list[tuple[int, ...]]:
        """Original attributes: each one-hot group once, other attributes alone."""
        units: list[tuple[int, ...]] = []
        seen: set[int] = set()
        for i in range(self.n_attributes):
            g = self.group_of(i)
            if g is None:
                units.append((i,))
            elif g not in seen:
                seen.add(g)
                units.append(self.groups[g])
        return units

    def positions(self, i: int) -> int:
        """Number of discrete positions of a non-numerical attribute."""
        kind = self.kind(i)
        if kind.is_boolean:
            return 2
        if kind.kind == ORDINAL:
            return len(kind.domain)
        raise ValueError(f"Attribute {i} is numerical; positions come from an interval table.")

    def is_binary_only(self) -> bool:
        return all(a.kind.is_boolean for a in self.attributes)

    def has_numerical(self) -> bool:
        return any(a.kind.kind == NUMERICAL for a in self.attributes)


def binary_schema(names: Sequence[str], n_classes: int = 2) -> AttributeSchema:
    return AttributeSchema(tuple(Attribute(n, AttributeKind.binary()) for n in names), (), n_classes)


def schema_to_dict(schema: AttributeSchema) -> dict[str, Any]:
    attributes = []
    for attr in schema.attributes:
        kind = attr.kind
        entry: dict[str, Any] = {"name": attr.name, "kind": kind.kind}
        if kind.kind == ONEHOT:
            entry["group"] = kind.group_id
        elif kind.kind == ORDINAL:
            entry["domain"] = list(kind.domain)
        elif kind.kind == NUMERICAL:
            if kind.lower_bound is not None:
                entry["lower"] = kind.lower_bound
            if kind.upper_bound is not None:
                entry["upper"] = kind.upper_bound
        attributes.append(entry)
    return {
        "attributes": attributes,
        "groups": [list(g) for g in schema.groups],
        "n_classes": schema.n_classes,
    }


def schema_from_dict(doc: dict[str, Any]) -> AttributeSchema:
    try:
        attributes = []
        for entry in doc["attributes"]:
            kind_name = entry["kind"]
            if kind_name == BINARY:
                kind = AttributeKind.binary()
            elif kind_name == ONEHOT:
                kind = AttributeKind.one_hot(int(entry["group"]))
            elif kind_name == ORDINAL:
                kind = AttributeKind.ordinal(entry["domain"])
            elif kind_name == NUMERICAL:
                kind = AttributeKind.numerical(entry.get("lower"), entry.get("upper"))
            else:
                raise ValueError(f"Invalid attribute kind '{kind_name}'.")
            attributes.append(Attribute(str(entry["name"]), kind))
        groups = tuple(tuple(int(i) for i in g) for g in doc.get("groups", []))
        return AttributeSchema(tuple(attributes), groups, int(doc["n_classes"]))
    except (KeyError, TypeError) as e:
        raise ValueError(f"Malformed schema document: missing or invalid field {e}") from e


def load_schema(path: str) -> AttributeSchema:
    with open(path, encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


def save_schema(schema: AttributeSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated N x M table with labels. Arrays are made read-only."""

    schema: AttributeSchema
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        rows = np.array(self.rows, dtype=float, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, self.schema.n_attributes)
        if rows.ndim != 2 or rows.shape[1] != self.schema.n_attributes:
            raise DatasetError(
                f"Rows must be an N x {self.schema.n_attributes} table, got shape {rows.shape}."
            )
        if labels.shape != (rows.shape[0],):
            raise DatasetError(f"Expected {rows.shape[0]} labels, got {labels.shape[0]}.")
        if np.isnan(rows).any():
            raise DatasetError("Missing values are not supported.")
        if labels.size and (labels.min() < 0 or labels.max() >= self.schema.n_classes):
            raise DatasetError(f"Class labels must lie in 0..{self.schema.n_classes - 1}.")

        for i, attr in enumerate(self.schema.attributes):
            kind = attr.kind
            col = rows[:, i]
            if kind.is_boolean:
                bad = np.flatnonzero((col != 0) & (col != 1))
                if bad.size:
                    raise DatasetError(f"Row {int(bad[0])}: attribute '{attr.name}' must be 0 or 1.")
            elif kind.kind == ORDINAL:
                bad = np.flatnonzero(~np.isin(col, kind.domain))
                if bad.size:
                    raise DatasetError(
                        f"Row {int(bad[0])}: attribute '{attr.name}' value {col[bad[0]]} not in domain {list(kind.domain)}."
                    )
            else:
                lo, hi = kind.lower_bound, kind.upper_bound
                bad = np.flatnonzero(
                    (col < (lo if lo is not None else -np.inf)) | (col > (hi if hi is not None else np.inf))
                )
                if bad.size:
                    raise DatasetError(
                        f"Row {int(bad[0])}: attribute '{attr.name}' value {col[bad[0]]} outside [{lo}, {hi}]."
                    )

        for g, members in enumerate(self.schema.groups):
            sums = rows[:, list(members)].sum(axis=1)
            bad = np.flatnonzero(sums != 1)
            if bad.size:
                raise OneHotViolation(int(bad[0]), g, members)

        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    @property
    def n_examples(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n_attributes(self) -> int:
        return int(self.rows.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, self.rows[idx], self.labels[idx])

    def class_histogram(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.schema.n_classes).astype(int).tolist()

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.labels, other.labels)
        )


def _parse_cell(text: str, attr: Attribute, row: int) -> float:
    raw = text.strip()
    if raw == "":
        raise DatasetError(f"Row {row}: missing value for attribute '{attr.name}'.")
    try:
        if attr.kind.kind == NUMERICAL:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        return float(int(raw))
    except ValueError as e:
        raise DatasetError(f"Row {row}: cannot parse '{raw}' for attribute '{attr.name}'.") from e


def load_dataset(path: str, schema: AttributeSchema, class_column: str = "c") -> Dataset:
    """Reads a CSV with a header row; columns are matched to the schema by name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected a header row.") from None
        if class_column not in header:
            raise DatasetError(f"{path}: class column '{class_column}' not found in header.")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DatasetError(f"{path}: header lacks schema attributes {missing}.")
        col_of = {name: header.index(name) for name in schema.names}
        label_col = header.index(class_column)

        rows: list[list[float]] = []
        labels: list[int] = []
        for r, record in enumerate(reader):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise DatasetError(f"{path}: row {r} has {len(record)} cells, expected {len(header)}.")
            rows.append([_parse_cell(record[col_of[a.name]], a, r) for a in schema.attributes])
            try:
                labels.append(int(record[label_col].strip()))
            except ValueError as e:
                raise DatasetError(f"{path}: row {r} has a non-integer class label.") from e

    if not rows:
        raise DatasetError(f"{path}: no rows")
    dataset = Dataset(schema, np.array(rows, dtype=float), np.array(labels, dtype=np.int64))
    LOG.debug("Loaded %s: N=%d M=%d", path, dataset.n_examples, dataset.n_attributes)
    return dataset


def format_cell(value: float, attr: Attribute) -> str:
    if attr.kind.kind == NUMERICAL:
        return repr(float(value))
    return str(int(value))


def save_dataset(dataset: Dataset, path: str, class_column: str = "c") -> None:
    attrs = dataset.schema.attributes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([a.name for a in attrs] + [class_column])
        for row, label in zip(dataset.rows, dataset.labels):
            writer.writerow([format_cell(v, a) for v, a in zip(row, attrs)] + [str(int(label))])


def sample_training_set(dataset: Dataset, n: int, seed: int) -> tuple[Dataset, Dataset]:
    """Splits off `n` random rows for training; the rest is the holdout set."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= dataset.n_examples:
        raise ValueError(f"Sample size must lie in 1..{dataset.n_examples}, got {n}.")
    order = np.random.default_rng(seed).permutation(dataset.n_examples)
    train_idx = np.sort(order[:n])
    holdout_idx = np.sort(order[n:])
    return dataset.subset(train_idx), dataset.subset(holdout_idx)
