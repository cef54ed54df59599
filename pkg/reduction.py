"""
3-SAT to dataset reconstruction: every satisfiable formula yields a forest
whose counts some dataset reproduces, and any such dataset carries a
satisfying assignment in its single row with all auxiliary attributes set.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from data_model import Dataset, binary_schema
from forest import Forest, Node, Tree, forest_to_dict
from recon import ReconProblem

LOG = logging.getLogger(__name__)

THRESHOLD = 0.5
# Brute-force satisfiability is only offered for small formulas.
MAX_ENUM_VARS = 20

Literal = tuple[int, bool]
Clause = tuple[Literal, Literal, Literal]


class ThreeSatError(ValueError):
    """Malformed 3-SAT instance or DIMACS file."""


class ReductionError(RuntimeError):
    """A reconstruction of an encoded formula does not carry an assignment."""


@dataclass(frozen=True)
class ThreeSatInstance:
    """Clauses of three (variable, positive) literals over variables 0..n_vars-1."""

    n_vars: int
    clauses: tuple[Clause, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.n_vars, int) or self.n_vars < 1:
            raise ThreeSatError("n_vars must be an integer >= 1.")
        if not self.clauses:
            raise ThreeSatError("A formula needs at least one clause.")
        clauses = []
        for ci, clause in enumerate(self.clauses):
            lits = tuple((int(v), bool(p)) for v, p in clause)
            if len(lits) != 3:
                raise ThreeSatError(f"Clause {ci} has {len(lits)} literals; exactly 3 are required.")
            for v, _ in lits:
                if not 0 <= v < self.n_vars:
                    raise ThreeSatError(f"Clause {ci} refers to variable {v}, outside 0..{self.n_vars - 1}.")
            if len({v for v, _ in lits}) != 3:
                raise ThreeSatError(f"Clause {ci} mentions a variable more than once.")
            clauses.append(lits)
        object.__setattr__(self, "clauses", tuple(clauses))

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    def satisfied_by(self, assignment: Sequence[bool]) -> bool:
        return all(any(bool(assignment[v]) == p for v, p in clause) for clause in self.clauses)


def _leaf(nodes: list[Node], count0: int) -> int:
    nodes.append(Node(len(nodes), (count0, 0)))
    return len(nodes) - 1


def _branch(nodes: list[Node], feature: int, build_left, build_right) -> int:
    # Children are built first so the parent's counts can be summed.
    slot = len(nodes)
    nodes.append(Node(slot, (0, 0)))
    left = build_left()
    right = build_right()
    total = nodes[left].counts[0] + nodes[right].counts[0]
    nodes[slot] = Node(slot, (total, 0), feature, THRESHOLD, left, right)
    return slot


def _clause_tree(inst: ThreeSatInstance, l: int) -> Tree:
    clause = sorted(inst.clauses[l])
    variables = [v for v, _ in clause]
    falsifying = tuple(0 if p else 1 for _, p in clause)
    n_examples = 6 * inst.n_clauses + 1
    nodes: list[Node] = []

    def perfect(depth: int, prefix: tuple[int, ...]) -> int:
        if depth == 3:
            return _leaf(nodes, 0 if prefix == falsifying else 1)
        return _branch(
            nodes,
            variables[depth],
            lambda: perfect(depth + 1, prefix + (0,)),
            lambda: perfect(depth + 1, prefix + (1,)),
        )

    _branch(
        nodes,
        inst.n_vars + l,
        lambda: _leaf(nodes, n_examples - 7),
        lambda: perfect(0, ()),
    )
    return Tree(tuple(nodes), 0)


def _auxiliary_tree(inst: ThreeSatInstance) -> Tree:
    n_clauses = inst.n_clauses
    n_examples = 6 * n_clauses + 1
    left_counts = [6 * n_clauses - 6] + ([6] if n_clauses > 1 else []) + [0] * max(0, n_clauses - 2)
    nodes: list[Node] = []

    def spine(depth: int) -> int:
        if depth == n_clauses:
            return _leaf(nodes, n_examples - sum(left_counts))
        return _branch(nodes, inst.n_vars + depth, lambda: _leaf(nodes, left_counts[depth]), lambda: spine(depth + 1))

    spine(0)
    return Tree(tuple(nodes), 0)


def encode_3sat(inst: ThreeSatInstance, encoding: str = "cp") -> tuple[Forest, ReconProblem]:
    """Forest of one tree per clause plus the auxiliary spine, and its no-bagging problem."""
    names = [f"u{j + 1}" for j in range(inst.n_vars)] + [f"a{l + 1}" for l in range(inst.n_clauses)]
    schema = binary_schema(names, 2)
    trees = [_clause_tree(inst, l) for l in range(inst.n_clauses)]
    trees.append(_auxiliary_tree(inst))
    forest = Forest(tuple(trees), schema, 6 * inst.n_clauses + 1, False)
    LOG.info("Encoded %d clauses over %d variables: N=%d, M=%d", inst.n_clauses, inst.n_vars, forest.n_examples, len(names))
    return forest, ReconProblem(forest, bagging=False, encoding=encoding, symmetry_breaking=True)


def decode_assignment(solution: Dataset, inst: ThreeSatInstance) -> list[bool]:
    aux = solution.rows[:, inst.n_vars : inst.n_vars + inst.n_clauses]
    hits = np.flatnonzero((aux == 1).all(axis=1))
    if hits.size == 0:
        raise ReductionError("No row has every auxiliary attribute set; the solution does not encode an assignment.")
    row = solution.rows[int(hits[0])]
    assignment = [bool(row[j] == 1) for j in range(inst.n_vars)]
    if not inst.satisfied_by(assignment):
        raise ReductionError(f"Decoded assignment {assignment} does not satisfy the formula.")
    return assignment


def is_satisfiable(inst: ThreeSatInstance) -> Optional[list[bool]]:
    """First satisfying assignment in counting order, or None."""
    if inst.n_vars > MAX_ENUM_VARS:
        raise ThreeSatError(f"Exhaustive search is limited to {MAX_ENUM_VARS} variables.")
    for bits in itertools.product((False, True), repeat=inst.n_vars):
        if inst.satisfied_by(bits):
            return list(bits)
    return None


def random_3sat(n_vars: int, n_clauses: int, seed: int) -> ThreeSatInstance:
    if n_vars < 3:
        raise ThreeSatError("Random 3-SAT needs at least 3 variables.")
    rng = np.random.default_rng(seed)
    clauses = []
    for _ in range(n_clauses):
        variables = rng.choice(n_vars, size=3, replace=False)
        signs = rng.integers(0, 2, size=3)
        clauses.append(tuple((int(v), bool(s)) for v, s in zip(variables, signs)))
    return ThreeSatInstance(n_vars, tuple(clauses))


def parse_dimacs(text: str) -> ThreeSatInstance:
    header: Optional[tuple[int, int]] = None
    literals: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ThreeSatError(f"Line {lineno}: malformed problem line '{line}'.")
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise ThreeSatError(f"Line {lineno}: malformed problem line '{line}'.") from None
            continue
        if header is None:
            raise ThreeSatError(f"Line {lineno}: clause before the 'p cnf' line.")
        try:
            literals.extend(int(tok) for tok in line.split())
        except ValueError:
            raise ThreeSatError(f"Line {lineno}: non-integer literal in '{line}'.") from None
    if header is None:
        raise ThreeSatError("Missing 'p cnf' problem line.")

    n_vars, n_clauses = header
    clauses: list[Clause] = []
    current: list[int] = []
    for lit in literals:
        if lit != 0:
            current.append(lit)
            continue
        if len(current) != 3:
            raise ThreeSatError(f"Clause {len(clauses) + 1} has {len(current)} literals; only 3-clauses are accepted.")
        for x in current:
            if abs(x) > n_vars:
                raise ThreeSatError(f"Literal {x} exceeds the declared {n_vars} variables.")
        clauses.append(tuple((abs(x) - 1, x > 0) for x in current))  # type: ignore[arg-type]
        current = []
    if current:
        raise ThreeSatError("Last clause is not terminated by 0.")
    if len(clauses) != n_clauses:
        raise ThreeSatError(f"Header declares {n_clauses} clauses, found {len(clauses)}.")
    return ThreeSatInstance(n_vars, tuple(clauses))


def read_dimacs(path: str) -> ThreeSatInstance:
    with open(path, encoding="utf-8") as f:
        return parse_dimacs(f.read())


def format_dimacs(inst: ThreeSatInstance) -> str:
    lines = [f"p cnf {inst.n_vars} {inst.n_clauses}"]
    for clause in inst.clauses:
        lines.append(" ".join(str(v + 1 if p else -(v + 1)) for v, p in clause) + " 0")
    return "\n".join(lines) + "\n"


def write_dimacs(inst: ThreeSatInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_dimacs(inst))


def problem_to_dict(inst: ThreeSatInstance, forest: Forest, problem: ReconProblem) -> dict[str, Any]:
    return {
        "formula": {
            "n_vars": inst.n_vars,
            "clauses": [[v + 1 if p else -(v + 1) for v, p in clause] for clause in inst.clauses],
        },
        "n_examples": problem.n_examples,
        "n_attributes": forest.schema.n_attributes,
        "bagging": problem.bagging,
        "symmetry_breaking": problem.symmetry,
        "forest": forest_to_dict(forest),
    }
