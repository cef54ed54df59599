import unittest

import numpy as np
from scipy.stats import binom

from data_model import Attribute, AttributeKind, AttributeSchema, Dataset
from evaluation import reconstruction_error
from events import ATTACK_RETRY, EventBus
from forest import Forest, Node, Tree, build_interval_tables, recount, tree_counts
from recon import (
    CP_BAGGING,
    CP_NOBAGGING,
    FLOW_NOBAGGING,
    ReconProblem,
    ReconstructionError,
    benchmark_fixed_assignment,
    build_model,
    feasible_by_enumeration,
    known_from_dataset,
    leaf_conditions,
    likelihood_table,
    objective_from_occurrences,
    pick_known_units,
    run_attack,
)
from solver import Status
from trainer import TrainParams, train_forest
from tests.helpers import move_one_example, random_binary_dataset, stump_forest, toy_data, toy_forest


def bagged_toy_forest(seed: int = 3) -> Forest:
    return train_forest(toy_data(), TrainParams(n_trees=2, bootstrap=True, max_features=None, seed=seed))


def true_multiplicities(n: int, seed: int, t: int) -> np.ndarray:
    rng = np.random.default_rng([seed, t])
    return np.bincount(np.sort(rng.integers(0, n, size=n)), minlength=n)


class LikelihoodTests(unittest.TestCase):
    def test_matches_binomial(self) -> None:
        table = likelihood_table(100, 7)
        self.assertAlmostEqual(float(table.probabilities[0]), 0.36603, places=5)
        for b in range(8):
            self.assertAlmostEqual(float(table.probabilities[b]), binom.pmf(b, 100, 0.01), places=12)
        self.assertGreater(float(table.tail), 1e-6)
        self.assertLess(float(table.tail), 1e-4)
        self.assertAlmostEqual(table.scaled_log_coeffs[0], 1e6 * np.log(0.99**100), delta=1)

    def test_impossible_counts_have_no_coefficient(self) -> None:
        table = likelihood_table(3, 5)
        self.assertEqual(table.probabilities[4], 0)
        self.assertIsNone(table.scaled_log_coeffs[4])
        self.assertIsNone(table.scaled_log_coeffs[5])
        self.assertEqual(table.tail, 0)
        self.assertEqual(table.log_probability(5), -np.inf)


class ProblemTests(unittest.TestCase):
    def test_defaults_come_from_forest(self) -> None:
        problem = ReconProblem(toy_forest())
        self.assertEqual(problem.n_examples, 4)
        self.assertFalse(problem.bagging)
        self.assertEqual(problem.encoding_tag, CP_NOBAGGING)
        self.assertFalse(problem.symmetry)
        self.assertTrue(ReconProblem(toy_forest(), encoding="flow").symmetry)

    def test_invalid_problems_rejected(self) -> None:
        with self.assertRaises(ValueError):
            ReconProblem(toy_forest(), n_examples=5)
        with self.assertRaises(ValueError):
            ReconProblem(toy_forest(), encoding="sat")
        with self.assertRaises(ValueError):
            ReconProblem(toy_forest(), known_attributes={(4, 0): 1})
        with self.assertRaises(ValueError):
            ReconProblem(toy_forest(), known_attributes={(0, 0): 2})

    def test_symmetry_breaking_excludes_known_attributes(self) -> None:
        with self.assertRaises(ValueError):
            ReconProblem(toy_forest(), symmetry_breaking=True, known_attributes={(0, 0): 0})
        problem = ReconProblem(toy_forest(), encoding="flow", known_attributes={(0, 0): 0})
        self.assertFalse(problem.symmetry)

    def test_encoding_tags(self) -> None:
        self.assertEqual(build_model(ReconProblem(toy_forest(), encoding="flow")).encoding, FLOW_NOBAGGING)
        self.assertEqual(build_model(ReconProblem(bagged_toy_forest())).encoding, CP_BAGGING)


class NoBaggingAttackTests(unittest.TestCase):
    def _assert_recovers_toy_data(self, problem: ReconProblem) -> None:
        outcome = run_attack(problem)
        self.assertIs(outcome.status, Status.OPTIMAL)
        truth = toy_data()
        self.assertEqual(reconstruction_error(truth, outcome.dataset).error, 0.0)
        for tree in problem.forest.trees:
            np.testing.assert_array_equal(recount(tree, outcome.dataset.rows, outcome.dataset.labels), tree_counts(tree))
        self.assertEqual(outcome.unused, [])
        self.assertEqual(outcome.occurrence_histogram(), {1: 8})

    def test_cp_recovers_toy_data(self) -> None:
        self._assert_recovers_toy_data(ReconProblem(toy_forest()))

    def test_cp_with_symmetry_recovers_toy_data(self) -> None:
        self._assert_recovers_toy_data(ReconProblem(toy_forest(), symmetry_breaking=True))

    def test_flow_recovers_toy_data(self) -> None:
        self._assert_recovers_toy_data(ReconProblem(toy_forest(), encoding="flow"))

    def test_known_attributes_are_respected(self) -> None:
        truth = toy_data()
        known = known_from_dataset(truth, [1])
        self.assertEqual(len(known), 4)
        outcome = run_attack(ReconProblem(toy_forest(), known_attributes=known))
        self.assertTrue(outcome.status.has_solution)
        np.testing.assert_array_equal(outcome.dataset.rows[:, 1], truth.rows[:, 1])
        self.assertEqual(reconstruction_error(truth, outcome.dataset).error, 0.0)

    def test_contradicting_known_attribute_is_infeasible(self) -> None:
        # Both class-0 examples reach a leaf with f3 = 0 in the first tree.
        outcome = run_attack(ReconProblem(toy_forest(), known_attributes={(0, 2): 1}))
        self.assertIs(outcome.status, Status.INFEASIBLE)
        self.assertIsNone(outcome.dataset)

    def test_inconsistent_forest_is_infeasible_in_both_encodings(self) -> None:
        forest = stump_forest([(2, 0), (1, 0)], [(0, 0), (1, 0)], n=2, bagging=False)
        self.assertFalse(feasible_by_enumeration(forest, [2, 0]))
        for encoding in ("cp", "flow"):
            self.assertIs(run_attack(ReconProblem(forest, encoding=encoding)).status, Status.INFEASIBLE)

    def test_solver_agrees_with_enumeration(self) -> None:
        for seed in range(4):
            data = random_binary_dataset(6, 4, seed)
            forest = train_forest(data, TrainParams(n_trees=2, max_depth=2, bootstrap=False, max_features=None, seed=seed))
            candidates = [forest, move_one_example(forest)]
            for candidate in filter(None, candidates):
                sizes = list(candidate.root_histograms()[0])
                expected = feasible_by_enumeration(candidate, sizes)
                for encoding in ("cp", "flow"):
                    status = run_attack(ReconProblem(candidate, encoding=encoding)).status
                    self.assertEqual(status.has_solution, expected, f"seed {seed} {encoding}")
                    if not expected:
                        self.assertIs(status, Status.INFEASIBLE)

    def test_toy_forest_is_feasible_by_enumeration(self) -> None:
        self.assertTrue(feasible_by_enumeration(toy_forest(), [2, 2]))
        self.assertFalse(feasible_by_enumeration(toy_forest(), [3, 1]))


class MixedKindTests(unittest.TestCase):
    def setUp(self) -> None:
        self.schema = AttributeSchema(
            (
                Attribute("grade", AttributeKind.ordinal([1, 2, 3])),
                Attribute("income", AttributeKind.numerical(0.0, 10.0)),
            ),
            (),
            2,
        )
        tree = Tree(
            (
                Node(0, (2, 1), 0, 1.5, 1, 2),
                Node(1, (1, 0)),
                Node(2, (1, 1), 1, 5.0, 3, 4),
                Node(3, (0, 1)),
                Node(4, (1, 0)),
            ),
            0,
        )
        self.forest = Forest((tree,), self.schema, 3)

    def test_leaf_conditions_use_positions(self) -> None:
        intervals = build_interval_tables(self.forest)
        tree = self.forest.trees[0]
        self.assertEqual(leaf_conditions(tree, 1, self.schema, intervals), [(0, "<=", 0)])
        self.assertEqual(leaf_conditions(tree, 4, self.schema, intervals), [(0, ">=", 1), (1, ">=", 1)])

    def test_reconstruction_routes_like_the_forest(self) -> None:
        outcome = run_attack(ReconProblem(self.forest))
        self.assertTrue(outcome.status.has_solution)
        rows = outcome.dataset.rows
        self.assertTrue(set(rows[:, 0].tolist()) <= {1.0, 2.0, 3.0})
        self.assertTrue(set(rows[:, 1].tolist()) <= {2.5, 7.5})
        tree = self.forest.trees[0]
        np.testing.assert_array_equal(recount(tree, rows, outcome.dataset.labels), tree_counts(tree))


class BaggingAttackTests(unittest.TestCase):
    def test_counts_reproduced_and_likelihood_not_below_truth(self) -> None:
        seed = 3
        forest = bagged_toy_forest(seed)
        outcome = run_attack(ReconProblem(forest, time_limit=120))
        self.assertIs(outcome.status, Status.OPTIMAL)
        self.assertEqual(outcome.encoding, CP_BAGGING)
        occ = outcome.occurrences
        np.testing.assert_array_equal(occ.sum(axis=1), [4, 4])
        for t, tree in enumerate(forest.trees):
            np.testing.assert_array_equal(recount(tree, outcome.dataset.rows, outcome.dataset.labels, occ[t]), tree_counts(tree))
        rm = outcome.model
        self.assertEqual(objective_from_occurrences(rm, outcome.result.assignment), outcome.result.objective)

        coeffs = rm.likelihood.scaled_log_coeffs
        truth_score = sum(coeffs[int(b)] for t in range(2) for b in true_multiplicities(4, seed, t))
        self.assertGreaterEqual(outcome.result.objective, truth_score)
        self.assertEqual(sum(outcome.occurrence_histogram().values()), 8)

    def test_zero_b_max_is_retried(self) -> None:
        bus = EventBus()
        retries = []
        bus.subscribe(ATTACK_RETRY, lambda e: retries.append(e.payload["b_max"]))
        outcome = run_attack(ReconProblem(bagged_toy_forest(), b_max=0), bus)
        self.assertTrue(outcome.status.has_solution)
        self.assertGreaterEqual(outcome.retries, 1)
        self.assertEqual(outcome.b_max_used, retries[-1])
        self.assertEqual(retries[0], 1)

    def test_cap_exhausted_raises(self) -> None:
        # One example cannot have f1 = 0 in the first tree and f1 = 1 in the second.
        forest = stump_forest([(1, 0), (0, 0)], [(0, 0), (1, 0)], n=1, bagging=True)
        bus = EventBus()
        retries = []
        bus.subscribe(ATTACK_RETRY, lambda e: retries.append(e.payload["b_max"]))
        with self.assertRaises(ReconstructionError):
            run_attack(ReconProblem(forest, b_max=1, b_max_cap=2), bus)
        self.assertEqual(retries, [2])

    def test_benchmark_keeps_fixed_attributes(self) -> None:
        base = toy_data()
        for seed in (3, 5):
            forest = bagged_toy_forest(seed)
            for order in ([0, 1, 2, 3], [3, 2, 1, 0]):
                truth = Dataset(base.schema, base.rows[order], base.labels[order])
                for encoding in ("cp", "flow"):
                    for symmetry_breaking in (None, True, False):
                        with self.subTest(seed=seed, order=order, encoding=encoding, symmetry_breaking=symmetry_breaking):
                            problem = ReconProblem(forest, encoding=encoding, symmetry_breaking=symmetry_breaking)
                            result = benchmark_fixed_assignment(problem, truth)
                            self.assertEqual(len(result.per_example_error), 4)
                            self.assertGreaterEqual(result.error, 0.0)
                            self.assertLessEqual(result.error, 1.0)
                            for k in range(4):
                                for i in result.fixed[k]:
                                    self.assertEqual(result.worst.rows[k, i], truth.rows[k, i])
                                for i in result.free[k]:
                                    self.assertNotEqual(result.worst.rows[k, i], truth.rows[k, i])
                            self.assertIn("error", result.to_dict())

    def test_flow_default_skips_symmetry_under_bagging(self) -> None:
        self.assertFalse(ReconProblem(bagged_toy_forest(), encoding="flow").symmetry)
        self.assertTrue(ReconProblem(toy_forest(), encoding="flow").symmetry)
        self.assertTrue(ReconProblem(bagged_toy_forest(), symmetry_breaking=True).symmetry)

    def test_benchmark_needs_bagging(self) -> None:
        with self.assertRaises(ValueError):
            benchmark_fixed_assignment(ReconProblem(toy_forest()), toy_data())


class KnownUnitTests(unittest.TestCase):
    def test_pick_known_units(self) -> None:
        schema = toy_data().schema
        units = pick_known_units(schema, 2, seed=0)
        self.assertEqual(len(units), 2)
        self.assertEqual(units, sorted(set(units)))
        self.assertEqual(pick_known_units(schema, 0, seed=0), [])
        with self.assertRaises(ValueError):
            pick_known_units(schema, 5, seed=0)

    def test_known_from_dataset_covers_every_example(self) -> None:
        truth = toy_data()
        known = known_from_dataset(truth, [0, 3])
        self.assertEqual(len(known), 8)
        self.assertEqual(known[3, 3], 1.0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
