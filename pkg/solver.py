"""
Finite-domain constraint solver.

Variables are booleans or bounded integers. Supported constraints: linear
equalities/inequalities, exactly-one, guarded implications, guarded
(reified) linears and domain-mapping channels. Search is chronological
backtracking over bounds propagation with Luby restarts, phase saving and
branch-and-bound on an integer linear objective (maximisation).
"""

from __future__ import annotations

import enum
import logging
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, NewType, Optional, Sequence, Union

import numpy as np

from events import SOLVER_INCUMBENT, SOLVER_RESTART, EventBus, emit

LOG = logging.getLogger(__name__)

VarId = NewType("VarId", int)

RESTART_BASE = 64
# Limits and the stop flag are checked every this many search steps.
CHECK_EVERY = 64


class ModelError(ValueError):
    """A constraint or objective that does not fit the model."""


@dataclass(frozen=True)
class BoolKind:
    pass


@dataclass(frozen=True)
class IntKind:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not isinstance(self.lo, int) or not isinstance(self.hi, int):
            raise ModelError("Integer bounds must be ints.")
        if self.lo > self.hi:
            raise ModelError(f"Empty integer domain [{self.lo}, {self.hi}].")


BOOL = BoolKind()
VarKind = Union[BoolKind, IntKind]


@dataclass(frozen=True)
class Lit:
    var: VarId
    positive: bool = True

    def __invert__(self) -> "Lit":
        return Lit(self.var, not self.positive)


@dataclass(frozen=True)
class Fixing:
    """Bound condition `var op value`."""

    var: VarId
    op: str
    value: int

    def __post_init__(self) -> None:
        if self.op not in ("<=", ">=", "=="):
            raise ModelError(f"Invalid fixing operator '{self.op}'.")

    def bounds(self, lo: int, hi: int) -> tuple[int, int]:
        if self.op == "<=":
            return lo, min(hi, self.value)
        if self.op == ">=":
            return max(lo, self.value), hi
        return max(lo, self.value), min(hi, self.value)

    def holds(self, value: int) -> bool:
        if self.op == "<=":
            return value <= self.value
        if self.op == ">=":
            return value >= self.value
        return value == self.value


Terms = tuple[tuple[int, VarId], ...]


@dataclass(frozen=True)
class LinearEq:
    terms: Terms
    rhs: int


@dataclass(frozen=True)
class LinearLe:
    terms: Terms
    rhs: int


@dataclass(frozen=True)
class ExactlyOne:
    vars: tuple[VarId, ...]


@dataclass(frozen=True)
class Implies:
    guard: Lit
    body: tuple[Fixing, ...]


@dataclass(frozen=True)
class ReifiedLinear:
    guard: Lit
    inner: Union[LinearEq, LinearLe]


@dataclass(frozen=True)
class MapDomain:
    """int_var == lo + j  <=>  indicators[j] == 1."""

    int_var: VarId
    indicators: tuple[VarId, ...]


Constraint = Union[LinearEq, LinearLe, ExactlyOne, Implies, ReifiedLinear, MapDomain]


class Status(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


@dataclass(frozen=True)
class SolveLimits:
    time_limit: Optional[float] = None
    workers: int = 1
    seed: int = 0
    node_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.time_limit is not None and self.time_limit < 0:
            raise ValueError("time_limit must be >= 0.")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ValueError("workers must be an integer >= 1.")


@dataclass
class SolveStats:
    nodes: int = 0
    conflicts: int = 0
    restarts: int = 0
    propagations: int = 0
    fixings: int = 0
    seconds: float = 0.0
    workers: int = 1

    def merge(self, other: "SolveStats") -> None:
        self.nodes += other.nodes
        self.conflicts += other.conflicts
        self.restarts += other.restarts
        self.propagations += other.propagations
        self.fixings += other.fixings


@dataclass
class SolveResult:
    status: Status
    assignment: dict[int, int] = field(default_factory=dict)
    objective: Optional[int] = None
    stats: SolveStats = field(default_factory=SolveStats)

    def value(self, var: VarId) -> int:
        return self.assignment[var]


@dataclass(frozen=True)
class Violation:
    index: int
    constraint: Optional[Constraint]
    detail: str


class Model:
    """Variables, constraints, an optional objective and search hints."""

    def __init__(self) -> None:
        self._kinds: list[VarKind] = []
        self._names: list[str] = []
        self._lo: list[int] = []
        self._hi: list[int] = []
        self.constraints: list[Constraint] = []
        self.objective: Optional[Terms] = None
        self.strategies: list[tuple[str, Any]] = []

    @property
    def n_vars(self) -> int:
        return len(self._kinds)

    def add_var(self, kind: VarKind, name: str = "") -> VarId:
        if isinstance(kind, BoolKind):
            lo, hi = 0, 1
        elif isinstance(kind, IntKind):
            lo, hi = kind.lo, kind.hi
        else:
            raise ModelError(f"Unknown variable kind {kind!r}.")
        self._kinds.append(kind)
        self._names.append(name or f"v{len(self._kinds) - 1}")
        self._lo.append(lo)
        self._hi.append(hi)
        return VarId(len(self._kinds) - 1)

    def new_bool(self, name: str = "") -> VarId:
        return self.add_var(BOOL, name)

    def new_int(self, lo: int, hi: int, name: str = "") -> VarId:
        return self.add_var(IntKind(lo, hi), name)

    def kind(self, var: VarId) -> VarKind:
        self._check_var(var)
        return self._kinds[var]

    def is_bool(self, var: VarId) -> bool:
        return isinstance(self.kind(var), BoolKind)

    def name(self, var: VarId) -> str:
        self._check_var(var)
        return self._names[var]

    def declared_bounds(self, var: VarId) -> tuple[int, int]:
        kind = self.kind(var)
        return (0, 1) if isinstance(kind, BoolKind) else (kind.lo, kind.hi)

    def domain(self, var: VarId) -> tuple[int, int]:
        """Current (possibly restricted) bounds. lo > hi means the domain was emptied."""
        self._check_var(var)
        return self._lo[var], self._hi[var]

    def restrict(self, var: VarId, lo: int, hi: int) -> None:
        self._check_var(var)
        self._lo[var] = max(self._lo[var], int(lo))
        self._hi[var] = min(self._hi[var], int(hi))

    def _check_var(self, var: Any) -> None:
        if not isinstance(var, (int, np.integer)) or isinstance(var, bool) or not 0 <= var < len(self._kinds):
            raise ModelError(f"Unknown variable {var!r}.")

    def _check_terms(self, terms: Sequence[tuple[int, VarId]]) -> None:
        for term in terms:
            if len(term) != 2:
                raise ModelError(f"Malformed term {term!r}.")
            coef, var = term
            if not isinstance(coef, (int, np.integer)) or isinstance(coef, bool):
                raise ModelError(f"Coefficient {coef!r} is not an exact integer.")
            self._check_var(var)

    def _check_lit(self, lit: Lit) -> None:
        self._check_var(lit.var)
        if not self.is_bool(lit.var):
            raise ModelError(f"Guard variable {self.name(lit.var)} must be boolean.")

    def _normalise(self, c: Constraint) -> Constraint:
        if isinstance(c, (LinearEq, LinearLe)):
            self._check_terms(c.terms)
            if not isinstance(c.rhs, (int, np.integer)) or isinstance(c.rhs, bool):
                raise ModelError(f"Right-hand side {c.rhs!r} is not an exact integer.")
            return type(c)(tuple((int(a), VarId(int(v))) for a, v in c.terms), int(c.rhs))
        if isinstance(c, ExactlyOne):
            if not c.vars:
                raise ModelError("ExactlyOne needs at least one variable.")
            for v in c.vars:
                self._check_var(v)
                if not self.is_bool(v):
                    raise ModelError(f"ExactlyOne member {self.name(v)} must be boolean.")
            return ExactlyOne(tuple(VarId(int(v)) for v in c.vars))
        if isinstance(c, Implies):
            self._check_lit(c.guard)
            for f in c.body:
                if not isinstance(f, Fixing):
                    raise ModelError(f"Implication body entries must be Fixing, got {f!r}.")
                self._check_var(f.var)
            return Implies(c.guard, tuple(c.body))
        if isinstance(c, ReifiedLinear):
            self._check_lit(c.guard)
            if not isinstance(c.inner, (LinearEq, LinearLe)):
                raise ModelError("ReifiedLinear wraps a LinearEq or LinearLe.")
            return ReifiedLinear(c.guard, self._normalise(c.inner))  # type: ignore[arg-type]
        if isinstance(c, MapDomain):
            self._check_var(c.int_var)
            kind = self.kind(c.int_var)
            if not isinstance(kind, IntKind):
                raise ModelError("MapDomain needs an integer variable.")
            size = kind.hi - kind.lo + 1
            if len(c.indicators) != size:
                raise ModelError(
                    f"MapDomain arity mismatch: {len(c.indicators)} indicators for a domain of size {size}."
                )
            for v in c.indicators:
                self._check_var(v)
                if not self.is_bool(v):
                    raise ModelError("MapDomain indicators must be boolean.")
            return MapDomain(VarId(int(c.int_var)), tuple(VarId(int(v)) for v in c.indicators))
        raise ModelError(f"Unsupported constraint {c!r}.")

    def add_constraint(self, c: Constraint) -> int:
        self.constraints.append(self._normalise(c))
        return len(self.constraints) - 1

    def set_objective(self, terms: Sequence[tuple[int, VarId]], sense: str = "maximize") -> None:
        if sense != "maximize":
            raise ModelError(f"Only maximisation is supported, got '{sense}'.")
        self._check_terms(terms)
        self.objective = tuple((int(a), VarId(int(v))) for a, v in terms)

    def add_decision_strategy(self, variables: Sequence[VarId]) -> None:
        for v in variables:
            self._check_var(v)
        self.strategies.append(("static", tuple(int(v) for v in variables)))

    def add_decision_groups(self, groups: Sequence[Sequence[VarId]]) -> None:
        checked = []
        for group in groups:
            for v in group:
                self._check_var(v)
                if not self.is_bool(v):
                    raise ModelError("Decision group members must be boolean.")
            checked.append(tuple(int(v) for v in group))
        self.strategies.append(("groups", tuple(checked)))


def _linear_value(terms: Terms, assignment: dict[int, int]) -> int:
    return sum(a * assignment[v] for a, v in terms)


def _lit_holds(lit: Lit, assignment: dict[int, int]) -> bool:
    return (assignment[lit.var] == 1) == lit.positive


def _linear_holds(c: Union[LinearEq, LinearLe], assignment: dict[int, int]) -> bool:
    value = _linear_value(c.terms, assignment)
    return value == c.rhs if isinstance(c, LinearEq) else value <= c.rhs


def verify_assignment(model: Model, assignment: dict[int, int]) -> list[Violation]:
    """Exact re-evaluation of every domain and constraint; empty list iff feasible."""
    missing = [v for v in range(model.n_vars) if v not in assignment]
    if missing:
        raise ModelError(f"Assignment lacks variable {model.name(VarId(missing[0]))}.")
    out: list[Violation] = []
    for v in range(model.n_vars):
        lo, hi = model.domain(VarId(v))
        value = assignment[v]
        if not lo <= value <= hi:
            out.append(Violation(-1, None, f"{model.name(VarId(v))}={value} outside [{lo}, {hi}]"))
    for idx, c in enumerate(model.constraints):
        if isinstance(c, (LinearEq, LinearLe)):
            ok = _linear_holds(c, assignment)
        elif isinstance(c, ExactlyOne):
            ok = sum(assignment[v] for v in c.vars) == 1
        elif isinstance(c, Implies):
            ok = not _lit_holds(c.guard, assignment) or all(f.holds(assignment[f.var]) for f in c.body)
        elif isinstance(c, ReifiedLinear):
            ok = not _lit_holds(c.guard, assignment) or _linear_holds(c.inner, assignment)
        else:
            lo = model.declared_bounds(c.int_var)[0]
            x = assignment[c.int_var]
            ok = all(assignment[b] == (1 if x == lo + j else 0) for j, b in enumerate(c.indicators))
        if not ok:
            out.append(Violation(idx, c, f"constraint {idx} ({type(c).__name__}) violated"))
    return out


def dump_model(model: Model) -> str:
    """Line-oriented text rendering for debugging."""
    lines = []
    for v in range(model.n_vars):
        lo, hi = model.domain(VarId(v))
        tag = "bool" if model.is_bool(VarId(v)) else "int"
        lines.append(f"var {v} {model.name(VarId(v))} {tag} [{lo},{hi}]")

    def lin(terms: Terms) -> str:
        return " + ".join(f"{a}*{model.name(v)}" for a, v in terms) or "0"

    def lit(g: Lit) -> str:
        return model.name(g.var) if g.positive else f"!{model.name(g.var)}"

    for idx, c in enumerate(model.constraints):
        if isinstance(c, LinearEq):
            text = f"lin {lin(c.terms)} == {c.rhs}"
        elif isinstance(c, LinearLe):
            text = f"lin {lin(c.terms)} <= {c.rhs}"
        elif isinstance(c, ExactlyOne):
            text = "exactly_one " + " ".join(model.name(v) for v in c.vars)
        elif isinstance(c, Implies):
            body = " & ".join(f"{model.name(f.var)} {f.op} {f.value}" for f in c.body)
            text = f"implies {lit(c.guard)} -> {body}"
        elif isinstance(c, ReifiedLinear):
            op = "==" if isinstance(c.inner, LinearEq) else "<="
            text = f"reified {lit(c.guard)} -> {lin(c.inner.terms)} {op} {c.inner.rhs}"
        else:
            text = f"map {model.name(c.int_var)} <-> " + " ".join(model.name(v) for v in c.indicators)
        lines.append(f"c{idx} {text}")
    if model.objective is not None:
        lines.append(f"maximize {lin(model.objective)}")
    return "\n".join(lines) + "\n"


def luby(i: int) -> int:
    """i-th element (1-based) of the Luby sequence 1 1 2 1 1 2 4 ..."""
    k = 1
    while (1 << k) - 1 < i:
        k += 1
    while i != (1 << k) - 1:
        i -= (1 << (k - 1)) - 1
        k = 1
        while (1 << k) - 1 < i:
            k += 1
    return 1 << (k - 1)


# Propagators. Each returns False on a wiped-out domain.


class _Prop:
    __slots__ = ("queued",)

    def __init__(self) -> None:
        self.queued = False

    def variables(self) -> list[int]:
        raise NotImplementedError

    def propagate(self, eng: "_Engine") -> bool:
        raise NotImplementedError


def _propagate_le(eng: "_Engine", terms: Sequence[tuple[int, int]], rhs: int) -> bool:
    lo, hi = eng.lo, eng.hi
    min_sum = 0
    for a, v in terms:
        min_sum += a * lo[v] if a > 0 else a * hi[v]
    slack = rhs - min_sum
    if slack < 0:
        return False
    for a, v in terms:
        if a > 0:
            if (hi[v] - lo[v]) * a > slack and not eng.set_hi(v, lo[v] + slack // a):
                return False
        elif a < 0:
            if (hi[v] - lo[v]) * -a > slack and not eng.set_lo(v, hi[v] - slack // -a):
                return False
    return True


def _sum_range(
    lo: list[int], hi: list[int], terms: Sequence[tuple[int, int]], override: Optional[dict[int, tuple[int, int]]] = None
) -> tuple[int, int]:
    smin = smax = 0
    for a, v in terms:
        l, h = lo[v], hi[v]
        if override is not None and v in override:
            bl, bh = override[v]
            l, h = max(l, bl), min(h, bh)
        if a >= 0:
            smin += a * l
            smax += a * h
        else:
            smin += a * h
            smax += a * l
    return smin, smax


class _Linear(_Prop):
    __slots__ = ("terms", "neg", "rhs", "eq")

    def __init__(self, terms: Terms, rhs: int, eq: bool) -> None:
        super().__init__()
        self.terms = [(a, int(v)) for a, v in terms if a != 0]
        self.neg = [(-a, v) for a, v in self.terms]
        self.rhs = rhs
        self.eq = eq

    def variables(self) -> list[int]:
        return [v for _, v in self.terms]

    def propagate(self, eng: "_Engine") -> bool:
        if not self.eq:
            return _propagate_le(eng, self.terms, self.rhs)
        while True:
            before = eng.fixings
            if not _propagate_le(eng, self.terms, self.rhs) or not _propagate_le(eng, self.neg, -self.rhs):
                return False
            if eng.fixings == before:
                return True

    def disentailed(self, lo: list[int], hi: list[int], override: Optional[dict[int, tuple[int, int]]] = None) -> bool:
        smin, smax = _sum_range(lo, hi, self.terms, override)
        if smin > self.rhs:
            return True
        return self.eq and smax < self.rhs


def _guard_state(eng: "_Engine", var: int, positive: bool) -> Optional[bool]:
    if eng.lo[var] != eng.hi[var]:
        return None
    return (eng.lo[var] == 1) == positive


def _falsify(eng: "_Engine", var: int, positive: bool) -> bool:
    return eng.set_hi(var, 0) if positive else eng.set_lo(var, 1)


class _ExactlyOne(_Prop):
    __slots__ = ("members", "bodies")

    def __init__(self, members: Sequence[int]) -> None:
        super().__init__()
        self.members = list(members)
        # member -> {var: (lo, hi)} implied when the member is 1
        self.bodies: Optional[dict[int, dict[int, tuple[int, int]]]] = None

    def variables(self) -> list[int]:
        return list(self.members)

    def propagate(self, eng: "_Engine") -> bool:
        lo, hi = eng.lo, eng.hi
        ones = 0
        free = []
        for v in self.members:
            if lo[v] == 1:
                ones += 1
                if ones > 1:
                    return False
            elif hi[v] == 1:
                free.append(v)
        if ones == 1:
            for v in free:
                if not eng.set_hi(v, 0):
                    return False
            return True
        if not free:
            return False
        if len(free) == 1:
            return eng.set_lo(free[0], 1)
        if self.bodies is None:
            return True
        return self._hull(eng, free)

    def _hull(self, eng: "_Engine", free: list[int]) -> bool:
        lo, hi = eng.lo, eng.hi
        common: Optional[dict[int, tuple[int, int]]] = None
        live = 0
        for m in free:
            body = self.bodies.get(m)  # type: ignore[union-attr]
            if body is None:
                return True
            dom = {}
            dead = False
            for u, (bl, bh) in body.items():
                l, h = max(bl, lo[u]), min(bh, hi[u])
                if l > h:
                    dead = True
                    break
                dom[u] = (l, h)
            if dead:
                continue
            live += 1
            if common is None:
                common = dom
            else:
                merged = {}
                for u, (l, h) in common.items():
                    if u in dom:
                        l2, h2 = dom[u]
                        merged[u] = (min(l, l2), max(h, h2))
                common = merged
            if not common:
                return True
        if live == 0:
            return False
        for u, (l, h) in (common or {}).items():
            if not eng.set_lo(u, l) or not eng.set_hi(u, h):
                return False
        return True


class _Implies(_Prop):
    __slots__ = ("guard", "positive", "body", "body_dom", "linked")

    def __init__(self, guard: Lit, body: Sequence[Fixing], declared: list[tuple[int, int]]) -> None:
        super().__init__()
        self.guard = int(guard.var)
        self.positive = guard.positive
        dom: dict[int, tuple[int, int]] = {}
        for f in body:
            v = int(f.var)
            cur = dom.get(v, declared[v])
            dom[v] = f.bounds(*cur)
        self.body_dom = dom
        self.body = [(v, l, h) for v, (l, h) in dom.items()]
        self.linked: list[_Linear] = []

    def variables(self) -> list[int]:
        return [self.guard] + [v for v, _, _ in self.body]

    def propagate(self, eng: "_Engine") -> bool:
        state = _guard_state(eng, self.guard, self.positive)
        if state is False:
            return True
        if state:
            for v, l, h in self.body:
                if not eng.set_lo(v, l) or not eng.set_hi(v, h):
                    return False
            return True
        lo, hi = eng.lo, eng.hi
        for v, l, h in self.body:
            if max(l, lo[v]) > min(h, hi[v]):
                return _falsify(eng, self.guard, self.positive)
        for lin in self.linked:
            if lin.disentailed(lo, hi, self.body_dom):
                return _falsify(eng, self.guard, self.positive)
        return True


class _Reified(_Prop):
    __slots__ = ("guard", "positive", "inner")

    def __init__(self, guard: Lit, inner: _Linear) -> None:
        super().__init__()
        self.guard = int(guard.var)
        self.positive = guard.positive
        self.inner = inner

    def variables(self) -> list[int]:
        return [self.guard] + self.inner.variables()

    def propagate(self, eng: "_Engine") -> bool:
        state = _guard_state(eng, self.guard, self.positive)
        if state is False:
            return True
        if state:
            return self.inner.propagate(eng)
        if self.inner.disentailed(eng.lo, eng.hi):
            return _falsify(eng, self.guard, self.positive)
        return True


class _MapDomain(_Prop):
    __slots__ = ("var", "base", "indicators")

    def __init__(self, var: int, base: int, indicators: Sequence[int]) -> None:
        super().__init__()
        self.var = var
        self.base = base
        self.indicators = list(indicators)

    def variables(self) -> list[int]:
        return [self.var] + self.indicators

    def propagate(self, eng: "_Engine") -> bool:
        lo, hi = eng.lo, eng.hi
        x, base, ind = self.var, self.base, self.indicators
        for j, b in enumerate(ind):
            if lo[b] == 1:
                val = base + j
                if not eng.set_lo(x, val) or not eng.set_hi(x, val):
                    return False
        while lo[x] <= hi[x] and hi[ind[lo[x] - base]] == 0:
            if not eng.set_lo(x, lo[x] + 1):
                return False
        while hi[x] >= lo[x] and hi[ind[hi[x] - base]] == 0:
            if not eng.set_hi(x, hi[x] - 1):
                return False
        l, h = lo[x], hi[x]
        for j, b in enumerate(ind):
            val = base + j
            if (val < l or val > h) and not eng.set_hi(b, 0):
                return False
        if l == h:
            return eng.set_lo(ind[l - base], 1)
        return True


class _Incumbent:
    """Best objective shared by all workers; updates are atomic and monotone."""

    def __init__(self, events: Optional[EventBus]) -> None:
        self._lock = threading.Lock()
        self._events = events
        self.best: Optional[int] = None
        self.assignment: Optional[list[int]] = None
        self.stop = threading.Event()
        self.exhausted = False

    def offer(self, value: int, assignment: list[int], worker: int, nodes: int, started: float) -> bool:
        with self._lock:
            if self.best is not None and value <= self.best:
                return False
            self.best = value
            self.assignment = list(assignment)
            LOG.debug("worker %d: incumbent %d after %d nodes", worker, value, nodes)
            emit(
                self._events,
                SOLVER_INCUMBENT,
                objective=value,
                nodes=nodes,
                seconds=time.monotonic() - started,
                worker=worker,
            )
            return True


class _Engine:
    def __init__(
        self,
        model: Model,
        worker: int,
        seed: int,
        shared: _Incumbent,
        limits: SolveLimits,
        events: Optional[EventBus],
        started: float,
    ) -> None:
        n = model.n_vars
        self.model = model
        self.worker = worker
        self.shared = shared
        self.limits = limits
        self.events = events
        self.started = started
        self.deadline = None if limits.time_limit is None else started + limits.time_limit
        self.stats = SolveStats()
        self.fixings = 0
        self.lo = [model.domain(VarId(v))[0] for v in range(n)]
        self.hi = [model.domain(VarId(v))[1] for v in range(n)]
        self.is_bool = [model.is_bool(VarId(v)) for v in range(n)]
        self.trail: list[tuple[int, int, int]] = []
        self.queue: deque[_Prop] = deque()
        self.watch: list[list[_Prop]] = [[] for _ in range(n)]
        self.props: list[_Prop] = []
        self.bound: Optional[int] = None
        self.obj_dirty = False
        self.phase = [1] * n
        self._compile(model)
        self._compile_objective(model)
        self._build_phases(model, seed)

    def _compile(self, model: Model) -> None:
        declared = [model.declared_bounds(VarId(v)) for v in range(model.n_vars)]
        linears: list[_Linear] = []
        implies: list[_Implies] = []
        exactly: list[_ExactlyOne] = []
        for c in model.constraints:
            if isinstance(c, (LinearEq, LinearLe)):
                p: _Prop = _Linear(c.terms, c.rhs, isinstance(c, LinearEq))
                linears.append(p)  # type: ignore[arg-type]
            elif isinstance(c, ExactlyOne):
                p = _ExactlyOne(c.vars)
                exactly.append(p)  # type: ignore[arg-type]
            elif isinstance(c, Implies):
                p = _Implies(c.guard, c.body, declared)
                implies.append(p)  # type: ignore[arg-type]
            elif isinstance(c, ReifiedLinear):
                p = _Reified(c.guard, _Linear(c.inner.terms, c.inner.rhs, isinstance(c.inner, LinearEq)))
            else:
                p = _MapDomain(int(c.int_var), declared[c.int_var][0], [int(b) for b in c.indicators])
            self.props.append(p)
            for v in set(p.variables()):
                self.watch[v].append(p)

        # Positive implication bodies feed the exactly-one hull.
        bodies: dict[int, list[_Implies]] = {}
        for imp in implies:
            if imp.positive:
                bodies.setdefault(imp.guard, []).append(imp)
        for ex in exactly:
            if all(m in bodies for m in ex.members):
                merged: dict[int, dict[int, tuple[int, int]]] = {}
                for m in ex.members:
                    dom: dict[int, tuple[int, int]] = {}
                    for imp in bodies[m]:
                        for v, (l, h) in imp.body_dom.items():
                            pl, ph = dom.get(v, (l, h))
                            dom[v] = (max(pl, l), min(ph, h))
                    merged[m] = dom
                ex.bodies = merged
                for m in ex.members:
                    for v in merged[m]:
                        if ex not in self.watch[v]:
                            self.watch[v].append(ex)

        # Linear relations over two or more body variables can refute an implication.
        checks: list[_Linear] = linears + [_Linear(tuple((1, VarId(v)) for v in ex.members), 1, True) for ex in exactly]
        by_var: dict[int, list[int]] = {}
        for idx, lin in enumerate(checks):
            for _, v in lin.terms:
                by_var.setdefault(v, []).append(idx)
        for imp in implies:
            if len(imp.body) < 2:
                continue
            hits: dict[int, int] = {}
            for v, _, _ in imp.body:
                for idx in by_var.get(v, ()):
                    hits[idx] = hits.get(idx, 0) + 1
            for idx, count in sorted(hits.items()):
                if count < 2:
                    continue
                lin = checks[idx]
                imp.linked.append(lin)
                for _, v in lin.terms:
                    if not self.is_bool[v] and v not in imp.body_dom and imp not in self.watch[v]:
                        self.watch[v].append(imp)

    def _compile_objective(self, model: Model) -> None:
        self.obj_plain: list[tuple[int, int]] = []
        self.obj_groups: list[tuple[list[int], list[int]]] = []
        self.obj_mask = bytearray(model.n_vars)
        if model.objective is None:
            return
        coef: dict[int, int] = {}
        for a, v in model.objective:
            coef[int(v)] = coef.get(int(v), 0) + a
        grouped: set[int] = set()
        for c in model.constraints:
            if isinstance(c, MapDomain) and any(int(b) in coef for b in c.indicators):
                inds = [int(b) for b in c.indicators]
                if any(b in grouped for b in inds):
                    continue
                self.obj_groups.append((inds, [coef.get(b, 0) for b in inds]))
                grouped.update(inds)
        self.obj_plain = [(a, v) for v, a in coef.items() if v not in grouped and a != 0]
        for v in coef:
            self.obj_mask[v] = 1

    def _build_phases(self, model: Model, seed: int) -> None:
        occ = [0] * model.n_vars
        for p in self.props:
            for v in set(p.variables()):
                occ[v] += 1
        rng = np.random.default_rng([seed, self.worker]) if self.worker > 0 else None
        noise = rng.random(model.n_vars) if rng is not None else np.zeros(model.n_vars)
        bools = [v for v in range(model.n_vars) if self.is_bool[v]]
        ints = [v for v in range(model.n_vars) if not self.is_bool[v]]
        bools.sort(key=lambda v: (-occ[v], noise[v], v))
        self.phases: list[tuple[str, Any]] = list(model.strategies)
        self.phases.append(("bools", tuple(bools)))
        self.phases.append(("ints", tuple(ints)))
        self.ptr = [0] * len(self.phases)

    # Domain updates

    def set_lo(self, v: int, value: int) -> bool:
        if value <= self.lo[v]:
            return True
        if value > self.hi[v]:
            return False
        self.trail.append((v, self.lo[v], self.hi[v]))
        self.lo[v] = value
        self._wake(v)
        return True

    def set_hi(self, v: int, value: int) -> bool:
        if value >= self.hi[v]:
            return True
        if value < self.lo[v]:
            return False
        self.trail.append((v, self.lo[v], self.hi[v]))
        self.hi[v] = value
        self._wake(v)
        return True

    def _wake(self, v: int) -> None:
        self.fixings += 1
        if self.obj_mask[v]:
            self.obj_dirty = True
        for p in self.watch[v]:
            if not p.queued:
                p.queued = True
                self.queue.append(p)

    def undo(self, mark: int) -> None:
        trail, lo, hi, is_bool, phase = self.trail, self.lo, self.hi, self.is_bool, self.phase
        while len(trail) > mark:
            v, l, h = trail.pop()
            if is_bool[v] and lo[v] == hi[v]:
                phase[v] = lo[v]
            lo[v] = l
            hi[v] = h
        self.obj_dirty = True

    def propagate(self) -> bool:
        queue = self.queue
        while True:
            while queue:
                p = queue.popleft()
                p.queued = False
                self.stats.propagations += 1
                if not p.propagate(self):
                    for q in queue:
                        q.queued = False
                    queue.clear()
                    return False
            if self.bound is not None and self.obj_dirty:
                self.obj_dirty = False
                if not self._propagate_objective():
                    for q in queue:
                        q.queued = False
                    queue.clear()
                    return False
            if not queue:
                return True

    def _propagate_objective(self) -> bool:
        lo, hi = self.lo, self.hi
        ub = 0
        for a, v in self.obj_plain:
            ub += a * hi[v] if a > 0 else a * lo[v]
        gmax = []
        for inds, coefs in self.obj_groups:
            best = None
            for b, c in zip(inds, coefs):
                if hi[b] == 1 and (best is None or c > best):
                    best = c
            if best is None:
                return False
            gmax.append(best)
            ub += best
        slack = ub - self.bound  # type: ignore[operator]
        if slack < 0:
            return False
        for a, v in self.obj_plain:
            if a > 0:
                if (hi[v] - lo[v]) * a > slack and not self.set_lo(v, hi[v] - slack // a):
                    return False
            elif (hi[v] - lo[v]) * -a > slack and not self.set_hi(v, lo[v] + slack // -a):
                return False
        for (inds, coefs), best in zip(self.obj_groups, gmax):
            for b, c in zip(inds, coefs):
                if hi[b] == 1 and c < best - slack and not self.set_hi(b, 0):
                    return False
        return True

    def objective_value(self) -> int:
        return sum(a * self.lo[v] for a, v in self.model.objective or ())

    # Search

    def _pick(self) -> Optional[tuple[int, int, int, int]]:
        """Next decision as (var, value, alt_lo, alt_hi), or None when everything is fixed."""
        lo, hi = self.lo, self.hi
        for pi, (kind, items) in enumerate(self.phases):
            if kind == "groups":
                best = None
                best_free = 0
                for group in items:
                    free = None
                    n_free = 0
                    done = False
                    for v in group:
                        if lo[v] == 1:
                            done = True
                            break
                        if hi[v] == 1:
                            n_free += 1
                            if free is None:
                                free = v
                    if done or free is None:
                        continue
                    if best is None or n_free < best_free:
                        best, best_free = free, n_free
                        if n_free == 1:
                            break
                if best is not None:
                    return best, 1, 0, 0
                continue
            p = self.ptr[pi]
            while p < len(items) and lo[items[p]] == hi[items[p]]:
                p += 1
            self.ptr[pi] = p
            if p == len(items):
                continue
            v = items[p]
            if self.is_bool[v]:
                value = self.phase[v] if kind == "bools" else 1
                return v, value, 1 - value, 1 - value
            return v, lo[v], lo[v] + 1, hi[v]
        return None

    def _limit_hit(self) -> bool:
        if self.shared.stop.is_set():
            return True
        if self.deadline is not None and time.monotonic() >= self.deadline:
            return True
        return self.limits.node_limit is not None and self.stats.nodes >= self.limits.node_limit

    def _sync_bound(self) -> None:
        best = self.shared.best
        if self.model.objective is not None and best is not None and (self.bound is None or best + 1 > self.bound):
            self.bound = best + 1
            self.obj_dirty = True

    def run(self) -> bool:
        """Searches until exhausted (True) or a limit stops it (False)."""
        for p in self.props:
            p.queued = True
            self.queue.append(p)
        if any(l > h for l, h in zip(self.lo, self.hi)):
            return True
        if self._limit_hit():
            return False
        if not self.propagate():
            return True
        root = len(self.trail)
        frames: list[tuple[int, int, int, int, tuple[int, ...]]] = []
        restart_no = 1
        budget = luby(restart_no) * RESTART_BASE
        since_restart = 0
        steps = 0
        while True:
            steps += 1
            if (steps - 1) % CHECK_EVERY == 0 and self._limit_hit():
                return False
            conflict = False
            self._sync_bound()
            if self.obj_dirty and self.bound is not None and not self.propagate():
                conflict = True
            else:
                decision = self._pick()
                if decision is None:
                    if self.model.objective is None:
                        self.shared.offer(0, self.lo, self.worker, self.stats.nodes, self.started)
                        return True
                    value = self.objective_value()
                    self.shared.offer(value, self.lo, self.worker, self.stats.nodes, self.started)
                    if self.bound is None or value + 1 > self.bound:
                        self.bound = value + 1
                    conflict = True
                else:
                    v, value, alt_lo, alt_hi = decision
                    self.stats.nodes += 1
                    frames.append((len(self.trail), v, alt_lo, alt_hi, tuple(self.ptr)))
                    conflict = not (self.set_lo(v, value) and self.set_hi(v, value) and self.propagate())
            while conflict:
                self.stats.conflicts += 1
                since_restart += 1
                if not frames:
                    return True
                mark, v, alt_lo, alt_hi, ptr = frames.pop()
                self.undo(mark)
                self.ptr = list(ptr)
                conflict = not (self.set_lo(v, alt_lo) and self.set_hi(v, alt_hi) and self.propagate())
            if since_restart >= budget and frames:
                self.undo(root)
                frames.clear()
                self.ptr = [0] * len(self.phases)
                self.stats.restarts += 1
                restart_no += 1
                budget = luby(restart_no) * RESTART_BASE
                since_restart = 0
                LOG.debug("worker %d: restart %d after %d conflicts", self.worker, self.stats.restarts, self.stats.conflicts)
                emit(
                    self.events,
                    SOLVER_RESTART,
                    restarts=self.stats.restarts,
                    conflicts=self.stats.conflicts,
                    worker=self.worker,
                )
                self.obj_dirty = True
                if self.bound is not None and not self.propagate():
                    return True


def solve(model: Model, limits: SolveLimits = SolveLimits(), events: Optional[EventBus] = None) -> SolveResult:
    started = time.monotonic()
    shared = _Incumbent(events)

    def work(worker: int) -> tuple[bool, SolveStats]:
        engine = _Engine(model, worker, limits.seed, shared, limits, events, started)
        exhausted = engine.run()
        engine.stats.fixings = engine.fixings
        if exhausted:
            shared.exhausted = True
            shared.stop.set()
        return exhausted, engine.stats

    stats = SolveStats(workers=limits.workers)
    if limits.workers == 1:
        outcomes = [work(0)]
    else:
        with ThreadPoolExecutor(max_workers=limits.workers) as pool:
            outcomes = list(pool.map(work, range(limits.workers)))
    for _, s in outcomes:
        stats.merge(s)
    stats.seconds = time.monotonic() - started

    exhausted = any(done for done, _ in outcomes)
    if shared.assignment is None:
        status = Status.INFEASIBLE if exhausted else Status.UNKNOWN
        LOG.info("solve: %s after %d nodes (%.2fs)", status.value, stats.nodes, stats.seconds)
        return SolveResult(status, {}, None, stats)

    assignment = {v: int(x) for v, x in enumerate(shared.assignment)}
    violations = verify_assignment(model, assignment)
    if violations:
        raise RuntimeError(f"Solver produced an assignment violating {len(violations)} constraints: {violations[0].detail}")
    if model.objective is None:
        status, objective = Status.OPTIMAL, None
    else:
        status = Status.OPTIMAL if exhausted else Status.FEASIBLE
        objective = _linear_value(model.objective, assignment)
    LOG.info(
        "solve: %s objective=%s nodes=%d conflicts=%d (%.2fs)",
        status.value,
        objective,
        stats.nodes,
        stats.conflicts,
        stats.seconds,
    )
    return SolveResult(status, assignment, objective, stats)
