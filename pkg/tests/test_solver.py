import itertools
import unittest

import numpy as np

from events import SOLVER_INCUMBENT, EventBus
from solver import (
    ExactlyOne,
    Fixing,
    Implies,
    LinearEq,
    LinearLe,
    Lit,
    MapDomain,
    Model,
    ModelError,
    ReifiedLinear,
    SolveLimits,
    Status,
    dump_model,
    luby,
    solve,
    verify_assignment,
)


def knapsack(values, weights, capacity) -> tuple[Model, list]:
    m = Model()
    xs = [m.new_bool(f"x{i}") for i in range(len(values))]
    m.add_constraint(LinearLe(tuple(zip(weights, xs)), capacity))
    m.set_objective(list(zip(values, xs)))
    return m, xs


def best_knapsack(values, weights, capacity) -> int:
    best = 0
    for bits in itertools.product((0, 1), repeat=len(values)):
        if sum(w * b for w, b in zip(weights, bits)) <= capacity:
            best = max(best, sum(v * b for v, b in zip(values, bits)))
    return best


class ModelTests(unittest.TestCase):
    def test_map_domain_arity_checked(self) -> None:
        m = Model()
        x = m.new_int(0, 2)
        qs = [m.new_bool() for _ in range(2)]
        with self.assertRaises(ModelError):
            m.add_constraint(MapDomain(x, tuple(qs)))

    def test_empty_exactly_one_rejected(self) -> None:
        with self.assertRaises(ModelError):
            Model().add_constraint(ExactlyOne(()))

    def test_integer_guard_rejected(self) -> None:
        m = Model()
        x = m.new_int(0, 3)
        with self.assertRaises(ModelError):
            m.add_constraint(Implies(Lit(x), (Fixing(x, "<=", 1),)))

    def test_fractional_coefficient_rejected(self) -> None:
        m = Model()
        x = m.new_bool()
        with self.assertRaises(ModelError):
            m.add_constraint(LinearLe(((0.5, x),), 1))

    def test_only_maximisation(self) -> None:
        m = Model()
        x = m.new_bool()
        with self.assertRaises(ModelError):
            m.set_objective([(1, x)], "minimize")

    def test_dump_model_lists_everything(self) -> None:
        m, xs = knapsack([3, 4], [2, 3], 4)
        text = dump_model(m)
        self.assertIn("var 0 x0 bool [0,1]", text)
        self.assertIn("lin 2*x0 + 3*x1 <= 4", text)
        self.assertIn("maximize 3*x0 + 4*x1", text)

    def test_verify_assignment_reports_violations(self) -> None:
        m = Model()
        a, b = m.new_bool("a"), m.new_bool("b")
        m.add_constraint(ExactlyOne((a, b)))
        self.assertEqual(verify_assignment(m, {a: 1, b: 0}), [])
        self.assertEqual(len(verify_assignment(m, {a: 1, b: 1})), 1)
        with self.assertRaises(ModelError):
            verify_assignment(m, {a: 1})


class SolveTests(unittest.TestCase):
    def test_luby_prefix(self) -> None:
        self.assertEqual([luby(i) for i in range(1, 16)], [1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8])

    def test_knapsack_matches_enumeration(self) -> None:
        rng = np.random.default_rng(4)
        for _ in range(5):
            values = [int(v) for v in rng.integers(1, 20, size=8)]
            weights = [int(w) for w in rng.integers(1, 10, size=8)]
            capacity = int(sum(weights) // 2)
            m, _ = knapsack(values, weights, capacity)
            result = solve(m)
            self.assertIs(result.status, Status.OPTIMAL)
            self.assertEqual(result.objective, best_knapsack(values, weights, capacity))

    def test_parallel_workers_agree(self) -> None:
        values, weights = [5, 9, 4, 7, 3, 8], [3, 5, 2, 4, 2, 5]
        m, _ = knapsack(values, weights, 10)
        result = solve(m, SolveLimits(workers=3, seed=7))
        self.assertIs(result.status, Status.OPTIMAL)
        self.assertEqual(result.objective, best_knapsack(values, weights, 10))
        self.assertEqual(result.stats.workers, 3)

    def test_infeasible_model(self) -> None:
        m = Model()
        xs = [m.new_bool() for _ in range(3)]
        m.add_constraint(ExactlyOne(tuple(xs)))
        m.add_constraint(LinearEq(tuple((1, x) for x in xs), 2))
        result = solve(m)
        self.assertIs(result.status, Status.INFEASIBLE)
        self.assertEqual(result.assignment, {})

    def test_emptied_domain_is_infeasible(self) -> None:
        m = Model()
        x = m.new_int(0, 5)
        m.restrict(x, 4, 5)
        m.restrict(x, 0, 2)
        self.assertIs(solve(m).status, Status.INFEASIBLE)

    def test_implication_and_reified_linear(self) -> None:
        m = Model()
        g = m.new_bool("g")
        x = m.new_int(0, 5, "x")
        y = m.new_int(0, 5, "y")
        m.restrict(g, 1, 1)
        m.add_constraint(Implies(Lit(g), (Fixing(x, ">=", 3), Fixing(y, "<=", 1))))
        m.add_constraint(ReifiedLinear(Lit(g), LinearEq(((1, x), (1, y)), 5)))
        m.set_objective([(1, y)])
        result = solve(m)
        self.assertIs(result.status, Status.OPTIMAL)
        self.assertEqual((result.value(x), result.value(y)), (4, 1))

    def test_negated_guard(self) -> None:
        m = Model()
        g = m.new_bool("g")
        x = m.new_int(0, 3, "x")
        m.add_constraint(Implies(Lit(g, False), (Fixing(x, "==", 0),)))
        m.set_objective([(1, x), (-2, g)])
        result = solve(m)
        # g=1 frees x: 3 - 2 = 1 beats g=0 with x=0.
        self.assertEqual(result.objective, 1)
        self.assertEqual(result.value(g), 1)

    def test_map_domain_channels_values(self) -> None:
        m = Model()
        x = m.new_int(2, 5, "x")
        qs = [m.new_bool(f"q{j}") for j in range(4)]
        m.add_constraint(MapDomain(x, tuple(qs)))
        m.set_objective([(1, qs[1]), (3, qs[2]), (2, qs[3])])
        result = solve(m)
        self.assertEqual(result.value(x), 4)
        self.assertEqual([result.value(q) for q in qs], [0, 0, 1, 0])

    def test_small_models_match_brute_force(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(8):
            m = Model()
            xs = [m.new_bool() for _ in range(4)]
            n = m.new_int(0, 3)
            cons = []
            for _ in range(3):
                coeffs = [int(c) for c in rng.integers(-3, 4, size=5)]
                rhs = int(rng.integers(0, 6))
                cons.append((coeffs, rhs))
                m.add_constraint(LinearLe(tuple(zip(coeffs, xs + [n])), rhs))
            m.add_constraint(Implies(Lit(xs[0]), (Fixing(n, ">=", 1),)))
            obj = [int(c) for c in rng.integers(-4, 5, size=5)]
            m.set_objective(list(zip(obj, xs + [n])))

            best = None
            for bits in itertools.product((0, 1), repeat=4):
                for nv in range(4):
                    vals = list(bits) + [nv]
                    if bits[0] and nv < 1:
                        continue
                    if all(sum(c * v for c, v in zip(coeffs, vals)) <= rhs for coeffs, rhs in cons):
                        score = sum(c * v for c, v in zip(obj, vals))
                        best = score if best is None else max(best, score)
            result = solve(m)
            if best is None:
                self.assertIs(result.status, Status.INFEASIBLE)
            else:
                self.assertIs(result.status, Status.OPTIMAL)
                self.assertEqual(result.objective, best)

    def test_incumbent_events(self) -> None:
        bus = EventBus()
        seen = []
        bus.subscribe(SOLVER_INCUMBENT, lambda e: seen.append(e.payload["objective"]))
        m, _ = knapsack([5, 9, 4, 7], [3, 5, 2, 4], 8)
        result = solve(m, events=bus)
        self.assertTrue(seen)
        self.assertEqual(seen[-1], result.objective)
        self.assertEqual(seen, sorted(seen))

    def test_zero_time_limit_gives_no_proof(self) -> None:
        m, _ = knapsack(list(range(1, 25)), list(range(2, 26)), 60)
        result = solve(m, SolveLimits(time_limit=0.0))
        self.assertIn(result.status, (Status.UNKNOWN, Status.FEASIBLE, Status.OPTIMAL))


if __name__ == "__main__":
    unittest.main(verbosity=2)
