"""
Training-set reconstruction from a forest's structure and node counts.

Three encodings share the attribute variables x[k, i]:

* cp_bagging: occurrence counts y[t, v, k, c] in 0..b_max, leaf-use flags
  w[t, v, k], per-tree totals eta[t, k] channelled to indicators q[t, k, b],
  and a bootstrap log-likelihood objective.
* cp_nobagging: each example reaches exactly one leaf per tree (y boolean),
  classes fixed in blocks, pure feasibility.
* flow_nobagging: unit flow from the root to one leaf per (tree, example),
  with left/right depth switches and cardinality at every node.

Non-boolean attributes are encoded by position: ordinal attributes by their
domain index, numerical ones by interval index between split values.
"""

from __future__ import annotations

import bisect
import dataclasses
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from data_model import NUMERICAL, ORDINAL, AttributeSchema, Dataset
from events import ATTACK_RETRY, EventBus, emit
from forest import (
    Forest,
    ForestError,
    IntervalTable,
    Tree,
    build_interval_tables,
    derive_split_sets,
    validate_forest,
)
from solver import (
    ExactlyOne,
    Fixing,
    Implies,
    LinearEq,
    LinearLe,
    Lit,
    MapDomain,
    Model,
    ReifiedLinear,
    SolveLimits,
    SolveResult,
    SolveStats,
    Status,
    VarId,
    solve,
)

LOG = logging.getLogger(__name__)

CP_BAGGING = "cp_bagging"
CP_NOBAGGING = "cp_nobagging"
FLOW_NOBAGGING = "flow_nobagging"

SCALE = 10**6
DEFAULT_B_MAX = 7
DEFAULT_B_MAX_CAP = 12
# Largest lexicographic key the solver's integer arithmetic is asked to carry.
MAX_LEX = 2**62


class ReconstructionError(RuntimeError):
    """The attack could not produce a reconstruction."""


class StructuralInfeasibility(ReconstructionError):
    """A cheap count argument already rules the encoding out."""


class BenchmarkError(RuntimeError):
    """The model clamped to the ground truth has no solution."""


@dataclass(frozen=True)
class ReconProblem:
    forest: Forest
    schema: Optional[AttributeSchema] = None
    n_examples: Optional[int] = None
    bagging: Optional[bool] = None
    b_max: int = DEFAULT_B_MAX
    known_attributes: Mapping[tuple[int, int], float] = field(default_factory=dict)
    time_limit: Optional[float] = None
    seed: int = 0
    workers: int = 1
    encoding: str = "cp"
    symmetry_breaking: Optional[bool] = None
    b_max_cap: int = DEFAULT_B_MAX_CAP

    def __post_init__(self) -> None:
        if self.schema is None:
            object.__setattr__(self, "schema", self.forest.schema)
        if self.n_examples is None:
            object.__setattr__(self, "n_examples", self.forest.n_examples)
        if self.bagging is None:
            object.__setattr__(self, "bagging", self.forest.trained_with_bagging)
        object.__setattr__(self, "known_attributes", dict(self.known_attributes))

        if self.schema.n_attributes != self.forest.schema.n_attributes:
            raise ValueError("Problem schema and forest schema disagree on the number of attributes.")
        if self.schema.n_classes != self.forest.n_classes:
            raise ValueError("Problem schema and forest disagree on the number of classes.")
        if self.n_examples != self.forest.n_examples:
            raise ValueError(f"n_examples={self.n_examples} but the forest was trained on N={self.forest.n_examples}.")
        if not isinstance(self.b_max, int) or self.b_max < 0:
            raise ValueError("b_max must be an integer >= 0.")
        if not isinstance(self.b_max_cap, int) or self.b_max_cap < 1:
            raise ValueError("b_max_cap must be an integer >= 1.")
        if self.encoding not in ("cp", "flow"):
            raise ValueError(f"Invalid encoding '{self.encoding}'. Allowed: cp, flow")
        if self.time_limit is not None and self.time_limit < 0:
            raise ValueError("time_limit must be >= 0.")
        for (k, i), value in self.known_attributes.items():
            _check_known(self.schema, self.n_examples, k, i, value)
        if self.symmetry_breaking and self.known_attributes:
            raise ValueError("Symmetry breaking assumes interchangeable examples; it cannot be combined with known attributes.")

    @property
    def symmetry(self) -> bool:
        # Pinned rows are not interchangeable.
        if self.known_attributes:
            return False
        if self.symmetry_breaking is None:
            return self.encoding == "flow" and not self.bagging
        return bool(self.symmetry_breaking)

    @property
    def encoding_tag(self) -> str:
        if self.bagging:
            return CP_BAGGING
        return FLOW_NOBAGGING if self.encoding == "flow" else CP_NOBAGGING


def _check_known(schema: AttributeSchema, n: int, k: int, i: int, value: float) -> None:
    if not 0 <= k < n:
        raise ValueError(f"Known attribute refers to example {k}, outside 0..{n - 1}.")
    if not 0 <= i < schema.n_attributes:
        raise ValueError(f"Known attribute refers to attribute {i}, outside 0..{schema.n_attributes - 1}.")
    kind = schema.kind(i)
    if kind.is_boolean and value not in (0, 1):
        raise ValueError(f"Known value {value} for boolean attribute '{schema.attributes[i].name}' is not 0/1.")
    if kind.kind == ORDINAL and value not in kind.domain:
        raise ValueError(f"Known value {value} is outside the domain of '{schema.attributes[i].name}'.")
    if kind.kind == NUMERICAL and not math.isfinite(float(value)):
        raise ValueError(f"Known value {value} for '{schema.attributes[i].name}' is not finite.")


@dataclass(frozen=True)
class LikelihoodTable:
    n: int
    b_max: int
    probabilities: tuple[Fraction, ...]
    scaled_log_coeffs: tuple[Optional[int], ...]
    scale: int
    tail: Fraction

    def log_probability(self, b: int) -> float:
        p = self.probabilities[b]
        return -math.inf if p == 0 else math.log(p.numerator) - math.log(p.denominator)


def likelihood_table(n: int, b_max: int, scale: int = SCALE) -> LikelihoodTable:
    """
    Exact binomial probabilities that one example is drawn b times among n
    draws with replacement, with integer objective coefficients
    round(scale * ln p_b). Zero-probability counts get no coefficient.
    """
    if n < 1:
        raise ValueError("n must be >= 1.")
    if b_max < 0:
        raise ValueError("b_max must be >= 0.")
    denominator = n**n
    probs = []
    for b in range(b_max + 1):
        if b > n:
            probs.append(Fraction(0))
        else:
            probs.append(Fraction(math.comb(n, b) * (n - 1) ** (n - b), denominator))
    coeffs: list[Optional[int]] = []
    for p in probs:
        if p == 0:
            coeffs.append(None)
        else:
            # Logs of the exact numerator and denominator keep precision where floats underflow.
            coeffs.append(round(scale * (math.log(p.numerator) - math.log(p.denominator))))
    return LikelihoodTable(n, b_max, tuple(probs), tuple(coeffs), scale, 1 - sum(probs, Fraction(0)))


@dataclass
class ReconModel:
    model: Model
    encoding: str
    problem: ReconProblem
    intervals: IntervalTable
    x: dict[tuple[int, int], VarId] = field(default_factory=dict)
    z: dict[tuple[int, int], VarId] = field(default_factory=dict)
    y: dict[tuple, VarId] = field(default_factory=dict)
    w: dict[tuple[int, int, int], VarId] = field(default_factory=dict)
    q: dict[tuple[int, int, int], VarId] = field(default_factory=dict)
    eta: dict[tuple[int, int], VarId] = field(default_factory=dict)
    lam: dict[tuple[int, int, int], VarId] = field(default_factory=dict)
    lex: dict[int, VarId] = field(default_factory=dict)
    class_of: list[int] = field(default_factory=list)
    likelihood: Optional[LikelihoodTable] = None

    @property
    def n_examples(self) -> int:
        return int(self.problem.n_examples)  # type: ignore[arg-type]

    @property
    def schema(self) -> AttributeSchema:
        return self.problem.schema  # type: ignore[return-value]

    @property
    def forest(self) -> Forest:
        return self.problem.forest


def positions(schema: AttributeSchema, intervals: IntervalTable, i: int) -> int:
    """Number of values the solver variable of attribute i ranges over."""
    if schema.kind(i).kind == NUMERICAL:
        return intervals.n_intervals(i)
    return schema.positions(i)


def _cut(schema: AttributeSchema, intervals: IntervalTable, i: int, threshold: float) -> int:
    # Largest position p whose value satisfies `value <= threshold` (-1 if none).
    kind = schema.kind(i)
    if kind.is_boolean:
        return bisect.bisect_right((0, 1), threshold) - 1
    if kind.kind == ORDINAL:
        return bisect.bisect_right(kind.domain, threshold) - 1
    return intervals.cut(i, threshold)


def leaf_conditions(
    tree: Tree, leaf: int, schema: AttributeSchema, intervals: IntervalTable
) -> list[tuple[int, str, int]]:
    """Position conditions (attribute, op, bound) an example must meet to reach `leaf`."""
    sets = derive_split_sets(tree, leaf)
    out = []
    for i, a in sorted(sets.negative):
        c = _cut(schema, intervals, i, a)
        if c < positions(schema, intervals, i) - 1:
            out.append((i, "<=", c))
    for i, a in sorted(sets.positive):
        c = _cut(schema, intervals, i, a)
        if c + 1 > 0:
            out.append((i, ">=", c + 1))
    return out


def to_position(schema: AttributeSchema, intervals: IntervalTable, i: int, value: float) -> int:
    kind = schema.kind(i)
    if kind.is_boolean:
        return int(value)
    if kind.kind == ORDINAL:
        return kind.domain.index(int(value))
    return intervals.interval_index(i, float(value))


def from_position(schema: AttributeSchema, intervals: IntervalTable, i: int, pos: int) -> float:
    kind = schema.kind(i)
    if kind.is_boolean:
        return float(pos)
    if kind.kind == ORDINAL:
        return float(kind.domain[pos])
    return intervals.midpoint(i, pos)


class _Builder:
    """State shared by the encodings: attribute variables, one-hot rows, symmetry keys."""

    def __init__(self, problem: ReconProblem, encoding: str) -> None:
        report = validate_forest(problem.forest)
        if not report.ok:
            raise ForestError(f"Forest is inconsistent: {report.violations[0].detail}")
        self.problem = problem
        self.schema: AttributeSchema = problem.schema  # type: ignore[assignment]
        self.n = int(problem.n_examples)  # type: ignore[arg-type]
        self.intervals = build_interval_tables(problem.forest)
        self.model = Model()
        self.rm = ReconModel(self.model, encoding, problem, self.intervals)
        self.conditions = [
            {v: leaf_conditions(tree, v, self.schema, self.intervals) for v in tree.leaves}
            for tree in problem.forest.trees
        ]

    def add_attributes(self) -> None:
        m, x = self.model, self.rm.x
        for k in range(self.n):
            for i, attr in enumerate(self.schema.attributes):
                if attr.kind.is_boolean:
                    x[k, i] = m.new_bool(f"x[{k},{i}]")
                else:
                    x[k, i] = m.new_int(0, positions(self.schema, self.intervals, i) - 1, f"x[{k},{i}]")
            for group in self.schema.groups:
                m.add_constraint(ExactlyOne(tuple(x[k, i] for i in group)))

    def body(self, t: int, v: int, k: int) -> tuple[Fixing, ...]:
        return tuple(Fixing(self.rm.x[k, i], op, c) for i, op, c in self.conditions[t][v])

    def add_lex(self, blocks: Sequence[Sequence[int]]) -> None:
        """lex[k] <= lex[k + 1] for consecutive examples of each block."""
        weights = []
        radix = 1
        for i in range(self.schema.n_attributes):
            weights.append(radix)
            radix *= positions(self.schema, self.intervals, i)
        if radix > MAX_LEX:
            raise ValueError(
                f"Symmetry breaking needs keys up to {radix}, more than the supported 2^62; turn it off."
            )
        m, rm = self.model, self.rm
        for block in blocks:
            for k in block:
                rm.lex[k] = m.new_int(0, radix - 1, f"lex[{k}]")
                terms = [(weights[i], rm.x[k, i]) for i in range(self.schema.n_attributes)]
                m.add_constraint(LinearEq(tuple(terms) + ((-1, rm.lex[k]),), 0))
            for a, b in zip(block, block[1:]):
                m.add_constraint(LinearLe(((1, rm.lex[a]), (-1, rm.lex[b])), 0))

    def symmetry_strategy(self, blocks: Sequence[Sequence[int]]) -> None:
        # Most significant attribute of the last row of each block first.
        order = []
        for block in blocks:
            if block:
                k = block[-1]
                order.extend(self.rm.x[k, i] for i in reversed(range(self.schema.n_attributes)))
        if order:
            self.model.add_decision_strategy(order)

    def class_blocks(self) -> list[list[int]]:
        histograms = self.problem.forest.root_histograms()
        first = histograms[0]
        for t, hist in enumerate(histograms):
            if hist != first:
                raise ForestError(
                    f"Root class histograms disagree (tree 0 {list(first)}, tree {t} {list(hist)}); "
                    "the forest cannot have been trained without bagging."
                )
        if sum(first) != self.n:
            raise ForestError(f"Root counts sum to {sum(first)}, expected N={self.n}.")
        blocks = []
        start = 0
        for c, size in enumerate(first):
            blocks.append(list(range(start, start + size)))
            self.rm.class_of.extend([c] * size)
            start += size
        return blocks

    def fixed_classes(self) -> None:
        m, rm = self.model, self.rm
        for k, cls in enumerate(rm.class_of):
            for c in range(self.schema.n_classes):
                rm.z[k, c] = m.new_bool(f"z[{k},{c}]")
                value = 1 if c == cls else 0
                m.restrict(rm.z[k, c], value, value)

    def leaf_groups(self) -> None:
        # One group per (tree, example); rare leaves first.
        rm = self.rm
        groups = []
        for t, tree in enumerate(self.problem.forest.trees):
            ordered = sorted(tree.leaves, key=lambda v: (tree.nodes[v].total, v))
            for k in range(self.n):
                if rm.encoding == FLOW_NOBAGGING:
                    keys = [(t, v, k) for v in ordered]
                else:
                    keys = [(t, v, k, rm.class_of[k]) for v in ordered]
                groups.append([rm.y[key] for key in keys if key in rm.y])
        self.model.add_decision_groups(groups)

    def finish(self) -> ReconModel:
        if self.problem.known_attributes:
            fix_known_attributes(self.rm, self.problem.known_attributes)
        LOG.info(
            "%s model: %d variables, %d constraints (|T|=%d, N=%d)",
            self.rm.encoding,
            self.model.n_vars,
            len(self.model.constraints),
            self.problem.forest.n_trees,
            self.n,
        )
        return self.rm


def build_cp_model(problem: ReconProblem) -> ReconModel:
    if not problem.bagging:
        raise ValueError("build_cp_model encodes bagged forests; use build_nobagging_model.")
    forest = problem.forest
    n, b_max = int(problem.n_examples), problem.b_max  # type: ignore[arg-type]
    if b_max < 1:
        raise StructuralInfeasibility(f"b_max={b_max}: {n} draws per tree cannot be spread over examples used 0 times.")
    for t, tree in enumerate(forest.trees):
        for v in tree.leaves:
            if tree.nodes[v].total > n * b_max:
                raise StructuralInfeasibility(
                    f"Tree {t} leaf {v} holds {tree.nodes[v].total} draws, more than N*b_max={n * b_max}."
                )

    builder = _Builder(problem, CP_BAGGING)
    m, rm = builder.model, builder.rm
    n_classes = forest.n_classes
    table = likelihood_table(n, b_max)
    rm.likelihood = table
    builder.add_attributes()

    for k in range(n):
        for c in range(n_classes):
            rm.z[k, c] = m.new_bool(f"z[{k},{c}]")
        m.add_constraint(ExactlyOne(tuple(rm.z[k, c] for c in range(n_classes))))

    likely_first = sorted(range(b_max + 1), key=lambda b: (-table.probabilities[b], b))
    strategy: list[VarId] = []
    objective: list[tuple[int, VarId]] = []
    per_example: list[list[VarId]] = [[] for _ in range(n)]

    for t, tree in enumerate(forest.trees):
        used = [v for v in tree.leaves if tree.nodes[v].total > 0]
        for k in range(n):
            use_flags = []
            occurrence_terms = []
            by_class: dict[int, list[VarId]] = {}
            ys = []
            for v in used:
                counts = tree.nodes[v].counts
                w = m.new_bool(f"w[{t},{v},{k}]")
                rm.w[t, v, k] = w
                use_flags.append(w)
                leaf_ys = []
                for c in range(n_classes):
                    if counts[c] == 0:
                        continue
                    y = m.new_int(0, min(b_max, counts[c]), f"y[{t},{v},{k},{c}]")
                    rm.y[t, v, k, c] = y
                    leaf_ys.append(y)
                    by_class.setdefault(c, []).append(y)
                    occurrence_terms.append((1, y))
                ys.extend(leaf_ys)
                m.add_constraint(Implies(Lit(w, False), tuple(Fixing(y, "<=", 0) for y in leaf_ys)))
                m.add_constraint(ReifiedLinear(Lit(w), LinearLe(tuple((-1, y) for y in leaf_ys), -1)))
                body = builder.body(t, v, k)
                if body:
                    m.add_constraint(Implies(Lit(w), body))
            for c, class_ys in by_class.items():
                m.add_constraint(Implies(Lit(rm.z[k, c], False), tuple(Fixing(y, "<=", 0) for y in class_ys)))
            if use_flags:
                m.add_constraint(LinearLe(tuple((1, w) for w in use_flags), 1))

            eta = m.new_int(0, b_max, f"eta[{t},{k}]")
            rm.eta[t, k] = eta
            m.add_constraint(LinearEq(tuple(occurrence_terms) + ((-1, eta),), 0))
            qs = []
            for b in range(b_max + 1):
                q = m.new_bool(f"q[{t},{k},{b}]")
                rm.q[t, k, b] = q
                qs.append(q)
                coeff = table.scaled_log_coeffs[b]
                if coeff is None:
                    m.restrict(q, 0, 0)
                else:
                    objective.append((coeff, q))
            m.add_constraint(MapDomain(eta, tuple(qs)))
            per_example[k].extend(use_flags)
            per_example[k].extend(rm.q[t, k, b] for b in likely_first)
            per_example[k].extend(ys)

        for v in used:
            for c, count in enumerate(tree.nodes[v].counts):
                if count:
                    m.add_constraint(LinearEq(tuple((1, rm.y[t, v, k, c]) for k in range(n)), count))
        m.add_constraint(LinearEq(tuple((1, rm.eta[t, k]) for k in range(n)), n))

    for k in range(n):
        strategy.extend(per_example[k])
    if problem.symmetry:
        builder.add_lex([list(range(n))])
    m.add_decision_strategy(strategy)
    m.set_objective(objective, "maximize")
    return builder.finish()


def build_nobagging_model(problem: ReconProblem) -> ReconModel:
    if problem.bagging:
        raise ValueError("build_nobagging_model needs a forest trained without bagging.")
    forest = problem.forest
    builder = _Builder(problem, CP_NOBAGGING)
    m, rm = builder.model, builder.rm
    blocks = builder.class_blocks()
    builder.add_attributes()
    builder.fixed_classes()

    for t, tree in enumerate(forest.trees):
        for k in range(builder.n):
            c = rm.class_of[k]
            members = []
            for v in tree.leaves:
                if tree.nodes[v].counts[c] == 0:
                    continue
                y = m.new_bool(f"y[{t},{v},{k},{c}]")
                rm.y[t, v, k, c] = y
                members.append(y)
                body = builder.body(t, v, k)
                if body:
                    m.add_constraint(Implies(Lit(y), body))
            if not members:
                raise StructuralInfeasibility(f"Tree {t} has no leaf holding class {c}.")
            m.add_constraint(ExactlyOne(tuple(members)))
        for v in tree.leaves:
            for c, count in enumerate(tree.nodes[v].counts):
                if count == 0:
                    continue
                terms = tuple((1, rm.y[t, v, k, c]) for k in blocks[c])
                m.add_constraint(LinearEq(terms, count))

    if problem.symmetry:
        builder.add_lex(blocks)
        builder.symmetry_strategy(blocks)
    builder.leaf_groups()
    return builder.finish()


def build_flow_model(problem: ReconProblem) -> ReconModel:
    if problem.bagging:
        raise ValueError("The flow encoding only covers forests trained without bagging.")
    schema: AttributeSchema = problem.schema  # type: ignore[assignment]
    if not schema.is_binary_only():
        raise ValueError("The flow encoding needs binary (or one-hot) attributes only.")
    forest = problem.forest
    builder = _Builder(problem, FLOW_NOBAGGING)
    m, rm = builder.model, builder.rm
    blocks = builder.class_blocks()
    builder.add_attributes()
    builder.fixed_classes()
    n = builder.n

    for t, tree in enumerate(forest.trees):
        for k in range(n):
            for node in tree.nodes:
                rm.y[t, node.id, k] = m.new_bool(f"y[{t},{node.id},{k}]")
            m.restrict(rm.y[t, tree.root, k], 1, 1)
            for d, internal in sorted(tree.depth_index.items()):
                lam = m.new_bool(f"lam[{t},{d},{k}]")
                rm.lam[t, d, k] = lam
                lefts = tuple((1, rm.y[t, tree.nodes[v].left, k]) for v in internal)
                rights = tuple((1, rm.y[t, tree.nodes[v].right, k]) for v in internal)
                m.add_constraint(LinearLe(lefts + ((-1, lam),), 0))
                m.add_constraint(LinearLe(rights + ((1, lam),), 1))
            for v in tree.internal_nodes():
                node = tree.nodes[v]
                yv, yl, yr = rm.y[t, v, k], rm.y[t, node.left, k], rm.y[t, node.right, k]
                m.add_constraint(LinearEq(((1, yl), (1, yr), (-1, yv)), 0))
                x = rm.x[k, node.feature]
                c = _cut(schema, builder.intervals, node.feature, node.threshold)
                if c < 0:
                    m.restrict(yl, 0, 0)
                elif c >= 1:
                    m.restrict(yr, 0, 0)
                else:
                    m.add_constraint(LinearLe(((1, x), (1, yl)), 1))
                    m.add_constraint(LinearLe(((1, yr), (-1, x)), 0))
        for node in tree.nodes:
            for c, count in enumerate(node.counts):
                terms = tuple((1, rm.y[t, node.id, k]) for k in blocks[c])
                if terms:
                    m.add_constraint(LinearEq(terms, count))
                elif count:
                    raise StructuralInfeasibility(f"Tree {t} node {node.id} counts class {c}, which has no examples.")

    if problem.symmetry:
        builder.add_lex(blocks)
        builder.symmetry_strategy(blocks)
    builder.leaf_groups()
    return builder.finish()


def build_model(problem: ReconProblem) -> ReconModel:
    if problem.bagging:
        return build_cp_model(problem)
    if problem.encoding == "flow":
        return build_flow_model(problem)
    return build_nobagging_model(problem)


def fix_known_attributes(rm: ReconModel, known: Mapping[tuple[int, int], float]) -> None:
    """Pins x variables to known values; fixing a one-hot member to 1 zeroes its siblings."""
    schema, n = rm.schema, rm.n_examples
    pins: dict[tuple[int, int], int] = {}
    for (k, i), value in known.items():
        _check_known(schema, n, k, i, value)
        pins[k, i] = to_position(schema, rm.intervals, i, value)

    for k in sorted({k for k, _ in pins}):
        for g, group in enumerate(schema.groups):
            ones = [i for i in group if pins.get((k, i)) == 1]
            zeros = [i for i in group if pins.get((k, i)) == 0]
            if len(ones) > 1:
                raise ValueError(f"Example {k}: one-hot group {g} has several known members set to 1.")
            if len(zeros) == len(group):
                raise ValueError(f"Example {k}: every member of one-hot group {g} is known to be 0.")
            if ones:
                for i in group:
                    pins.setdefault((k, i), 1 if i == ones[0] else 0)

    for (k, i), pos in pins.items():
        rm.model.restrict(rm.x[k, i], pos, pos)


def occurrences(rm: ReconModel, assignment: Mapping[int, int]) -> np.ndarray:
    """Per (tree, example) number of times the example is used."""
    n_trees = rm.forest.n_trees
    if rm.encoding != CP_BAGGING:
        return np.ones((n_trees, rm.n_examples), dtype=np.int64)
    out = np.zeros((n_trees, rm.n_examples), dtype=np.int64)
    for (t, k), var in rm.eta.items():
        out[t, k] = assignment[var]
    return out


def used_leaves(rm: ReconModel, assignment: Mapping[int, int]) -> dict[tuple[int, int], int]:
    """(tree, example) -> leaf the example reaches, for examples used in that tree."""
    out: dict[tuple[int, int], int] = {}
    for key, var in rm.y.items():
        if not assignment[var]:
            continue
        t, v, k = key[0], key[1], key[2]
        if rm.encoding == FLOW_NOBAGGING and not rm.forest.trees[t].nodes[v].is_leaf:
            continue
        out[t, k] = v
    return out


def recount_from_occurrences(rm: ReconModel, assignment: Mapping[int, int]) -> list[np.ndarray]:
    """Node class counts implied by the occurrence variables of a solution."""
    out = []
    for t, tree in enumerate(rm.forest.trees):
        counts = np.zeros((tree.n_nodes, rm.forest.n_classes), dtype=np.int64)
        out.append(counts)
    for key, var in rm.y.items():
        value = assignment[var]
        if not value:
            continue
        if rm.encoding == FLOW_NOBAGGING:
            t, v, k = key
            if not rm.forest.trees[t].nodes[v].is_leaf:
                continue
            c = rm.class_of[k]
        else:
            t, v, k, c = key
        out[t][v, c] += value
    for t, tree in enumerate(rm.forest.trees):
        for v in reversed(_preorder(tree)):
            node = tree.nodes[v]
            if not node.is_leaf:
                out[t][v] = out[t][node.left] + out[t][node.right]
    return out


def _preorder(tree: Tree) -> list[int]:
    order = []
    stack = [tree.root]
    while stack:
        v = stack.pop()
        order.append(v)
        node = tree.nodes[v]
        if not node.is_leaf:
            stack.extend((node.right, node.left))
    return order


def unused_examples(rm: ReconModel, assignment: Mapping[int, int]) -> list[int]:
    if rm.encoding != CP_BAGGING:
        return []
    occ = occurrences(rm, assignment)
    return [int(k) for k in np.flatnonzero(occ.sum(axis=0) == 0)]


def _lowest_row(schema: AttributeSchema) -> list[int]:
    row = [0] * schema.n_attributes
    for group in schema.groups:
        row[group[0]] = 1
    return row


def decode_solution(rm: ReconModel, assignment: Mapping[int, int]) -> Dataset:
    schema, intervals = rm.schema, rm.intervals
    unused = set(unused_examples(rm, assignment))
    lowest = _lowest_row(schema)
    known = rm.problem.known_attributes
    rows = np.zeros((rm.n_examples, schema.n_attributes), dtype=float)
    labels = np.zeros(rm.n_examples, dtype=np.int64)
    for k in range(rm.n_examples):
        for i in range(schema.n_attributes):
            pos = assignment[rm.x[k, i]]
            if k in unused and (k, i) not in known:
                group = schema.group_of(i)
                if group is None or not any((k, j) in known for j in schema.groups[group]):
                    pos = lowest[i]
            rows[k, i] = from_position(schema, intervals, i, pos)
        if rm.class_of:
            labels[k] = rm.class_of[k]
        else:
            labels[k] = next(c for c in range(schema.n_classes) if assignment[rm.z[k, c]] == 1)
    if unused:
        LOG.info("%d examples are unused in every tree; their free attributes take the lowest legal values", len(unused))
    return Dataset(schema, rows, labels)


def objective_from_occurrences(rm: ReconModel, assignment: Mapping[int, int]) -> int:
    table = rm.likelihood
    if table is None:
        raise ValueError("Only the bagging encoding has a likelihood objective.")
    total = 0
    for b in occurrences(rm, assignment).ravel():
        coeff = table.scaled_log_coeffs[int(b)]
        if coeff is None:
            raise ValueError(f"Occurrence count {b} has probability zero.")
        total += coeff
    return total


@dataclass
class AttackOutcome:
    dataset: Optional[Dataset]
    result: SolveResult
    encoding: str
    b_max_used: int
    occurrences: Optional[np.ndarray] = None
    unused: list[int] = field(default_factory=list)
    seconds: float = 0.0
    retries: int = 0
    model: Optional[ReconModel] = None

    @property
    def status(self) -> Status:
        return self.result.status

    def occurrence_histogram(self) -> dict[int, int]:
        if self.occurrences is None:
            return {}
        return {int(b): int(c) for b, c in sorted(Counter(self.occurrences.ravel().tolist()).items())}

    def to_report(self, decoded_path: Optional[str] = None) -> dict[str, Any]:
        stats = self.result.stats
        return {
            "decoded": decoded_path,
            "encoding": self.encoding,
            "status": self.status.value,
            "objective": self.result.objective,
            "b_max_used": self.b_max_used,
            "retries": self.retries,
            "occurrences": None if self.occurrences is None else self.occurrences.tolist(),
            "occurrence_histogram": {str(b): c for b, c in self.occurrence_histogram().items()},
            "unused_examples": list(self.unused),
            "seconds": round(self.seconds, 3),
            "solver": dataclasses.asdict(stats),
        }


def run_attack(problem: ReconProblem, events: Optional[EventBus] = None) -> AttackOutcome:
    """
    Builds, solves and decodes. With bagging an infeasible model is retried with
    b_max + 1 up to the cap; all retries share the time budget.
    """
    started = time.monotonic()
    deadline = None if problem.time_limit is None else started + problem.time_limit
    b_max = problem.b_max
    retries = 0
    while True:
        remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
        current = dataclasses.replace(problem, b_max=b_max, time_limit=remaining)
        try:
            rm: Optional[ReconModel] = build_model(current)
        except StructuralInfeasibility as e:
            LOG.info("b_max=%d ruled out before solving: %s", b_max, e)
            rm = None
            result = SolveResult(Status.INFEASIBLE, {}, None, SolveStats(workers=problem.workers))
        if rm is not None:
            limits = SolveLimits(time_limit=remaining, workers=problem.workers, seed=problem.seed)
            result = solve(rm.model, limits, events)

        if result.status.has_solution and rm is not None:
            dataset = decode_solution(rm, result.assignment)
            return AttackOutcome(
                dataset,
                result,
                current.encoding_tag,
                b_max,
                occurrences(rm, result.assignment),
                unused_examples(rm, result.assignment),
                time.monotonic() - started,
                retries,
                rm,
            )
        if result.status is Status.INFEASIBLE and problem.bagging:
            if b_max >= problem.b_max_cap:
                raise ReconstructionError(
                    f"Still infeasible at b_max={b_max} (cap {problem.b_max_cap}); the counts cannot come from bagging."
                )
            if deadline is not None and time.monotonic() >= deadline:
                timed_out = SolveResult(Status.UNKNOWN, {}, None, result.stats)
                return AttackOutcome(
                    None, timed_out, current.encoding_tag, b_max, seconds=time.monotonic() - started, retries=retries
                )
            retries += 1
            LOG.info("Infeasible with b_max=%d, retrying with b_max=%d", b_max, b_max + 1)
            emit(events, ATTACK_RETRY, b_max=b_max + 1, previous_status=result.status.value)
            b_max += 1
            continue
        return AttackOutcome(
            None, result, current.encoding_tag, b_max, seconds=time.monotonic() - started, retries=retries, model=rm
        )


def attack(problem: ReconProblem, events: Optional[EventBus] = None) -> tuple[Optional[Dataset], SolveResult]:
    outcome = run_attack(problem, events)
    return outcome.dataset, outcome.result


@dataclass
class BenchmarkResult:
    fixed: list[frozenset[int]]
    free: list[frozenset[int]]
    worst: Dataset
    per_example_error: list[float]
    error: float
    result: SolveResult

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": self.error,
            "per_example_error": self.per_example_error,
            "fixed": [sorted(f) for f in self.fixed],
            "free": [sorted(f) for f in self.free],
            "status": self.result.status.value,
        }


def fixed_attributes(rm: ReconModel, assignment: Mapping[int, int]) -> list[frozenset[int]]:
    """Attributes pinned by the split sets of the leaves each example uses."""
    fixed: list[set[int]] = [set() for _ in range(rm.n_examples)]
    for (t, k), v in used_leaves(rm, assignment).items():
        fixed[k] |= derive_split_sets(rm.forest.trees[t], v).attributes()
    return [frozenset(f) for f in fixed]


def _farthest(n_positions: int, pos: int) -> int:
    # Ties go to the lower position.
    return 0 if pos >= n_positions - 1 - pos else n_positions - 1


def worst_consistent_row(
    schema: AttributeSchema, intervals: IntervalTable, truth: Sequence[float], fixed: frozenset[int]
) -> tuple[list[float], set[int]]:
    """Worst reconstruction agreeing with `truth` on fixed attributes, and the units it gets wrong."""
    row = [float(v) for v in truth]
    wrong: set[int] = set()
    for u, unit in enumerate(schema.units()):
        if len(unit) > 1:
            true_member = next(i for i in unit if truth[i] == 1)
            if true_member in fixed:
                continue
            other = next((i for i in unit if i != true_member and i not in fixed), None)
            if other is None:
                continue
            for i in unit:
                row[i] = 1.0 if i == other else 0.0
            wrong.add(u)
            continue
        i = unit[0]
        if i in fixed:
            continue
        n_pos = positions(schema, intervals, i)
        if n_pos < 2:
            continue
        pos = to_position(schema, intervals, i, truth[i])
        row[i] = from_position(schema, intervals, i, _farthest(n_pos, pos))
        wrong.add(u)
    return row, wrong


def benchmark_fixed_assignment(problem: ReconProblem, truth: Dataset) -> BenchmarkResult:
    """
    Solves the bagging model with x and z clamped to the ground truth, reads the
    leaves each example uses, and builds the worst reconstruction consistent
    with them.
    """
    if not problem.bagging:
        raise ValueError("The fixed-assignment benchmark applies to bagged forests.")
    if truth.n_examples != problem.n_examples or truth.n_attributes != problem.schema.n_attributes:  # type: ignore[union-attr]
        raise ValueError("Ground truth does not match the problem size.")
    try:
        rm = build_cp_model(dataclasses.replace(problem, known_attributes={}, symmetry_breaking=False))
    except StructuralInfeasibility as e:
        raise BenchmarkError(f"Clamped model is infeasible: {e}") from e
    schema, intervals = rm.schema, rm.intervals
    for k in range(truth.n_examples):
        for i in range(schema.n_attributes):
            pos = to_position(schema, intervals, i, truth.rows[k, i])
            rm.model.restrict(rm.x[k, i], pos, pos)
        for c in range(schema.n_classes):
            value = 1 if truth.labels[k] == c else 0
            rm.model.restrict(rm.z[k, c], value, value)

    result = solve(rm.model, SolveLimits(problem.time_limit, problem.workers, problem.seed))
    if result.status is Status.INFEASIBLE:
        raise BenchmarkError("Clamped model is infeasible; the forest does not match the ground truth.")
    if not result.status.has_solution:
        raise BenchmarkError("No solution of the clamped model within the time limit.")

    fixed = fixed_attributes(rm, result.assignment)
    n_units = len(schema.units())
    rows = []
    free: list[frozenset[int]] = []
    per_example = []
    for k in range(truth.n_examples):
        row, wrong = worst_consistent_row(schema, intervals, truth.rows[k], fixed[k])
        rows.append(row)
        free_attrs = frozenset(i for u in wrong for i in schema.units()[u])
        free.append(free_attrs)
        per_example.append(len(wrong) / n_units)
    worst = Dataset(schema, np.array(rows, dtype=float), truth.labels)
    error = float(np.mean(per_example)) if per_example else 0.0
    LOG.info("Benchmark worst-case error %.4f over %d examples", error, truth.n_examples)
    return BenchmarkResult(fixed, free, worst, per_example, error, result)


def known_from_dataset(truth: Dataset, units: Sequence[int]) -> dict[tuple[int, int], float]:
    """Known-attribute map revealing the given original attributes of every example."""
    all_units = truth.schema.units()
    known: dict[tuple[int, int], float] = {}
    for u in units:
        if not 0 <= u < len(all_units):
            raise ValueError(f"Unknown attribute unit {u}.")
        for i in all_units[u]:
            for k in range(truth.n_examples):
                known[k, i] = float(truth.rows[k, i])
    return known


def pick_known_units(schema: AttributeSchema, count: int, seed: int) -> list[int]:
    n_units = len(schema.units())
    if not 0 <= count <= n_units:
        raise ValueError(f"Cannot reveal {count} of {n_units} original attributes.")
    rng = np.random.default_rng(seed)
    return sorted(int(u) for u in rng.choice(n_units, size=count, replace=False))


def feasible_by_enumeration(forest: Forest, class_sizes: Sequence[int]) -> bool:
    """
    Exhaustive no-bagging oracle for small boolean schemas: does some dataset
    with these class sizes route to exactly the forest's leaf counts?
    """
    schema = forest.schema
    if not schema.is_binary_only():
        raise ValueError("Enumeration needs boolean attributes.")
    m = schema.n_attributes
    if m > 16:
        raise ValueError("Enumeration is limited to 16 attributes.")
    signatures: list[tuple[int, ...]] = []
    seen = set()
    for bits in range(1 << m):
        row = [(bits >> i) & 1 for i in range(m)]
        if any(sum(row[i] for i in group) != 1 for group in schema.groups):
            continue
        sig = tuple(tree.route(row) for tree in forest.trees)
        if sig not in seen:
            seen.add(sig)
            signatures.append(sig)

    for c, size in enumerate(class_sizes):
        residual = [{v: tree.nodes[v].counts[c] for v in tree.leaves} for tree in forest.trees]
        if any(sum(r.values()) != size for r in residual):
            return False
        if not _fill(signatures, residual, size, 0):
            return False
    return True


def _fill(signatures: list[tuple[int, ...]], residual: list[dict[int, int]], remaining: int, start: int) -> bool:
    if remaining == 0:
        return all(value == 0 for r in residual for value in r.values())
    for s in range(start, len(signatures)):
        sig = signatures[s]
        if all(residual[t][v] > 0 for t, v in enumerate(sig)):
            for t, v in enumerate(sig):
                residual[t][v] -= 1
            ok = _fill(signatures, residual, remaining - 1, s)
            for t, v in enumerate(sig):
                residual[t][v] += 1
            if ok:
                return True
    return False
