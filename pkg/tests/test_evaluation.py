import csv
import itertools
import os
import tempfile
import unittest

import numpy as np
from scipy.optimize import linear_sum_assignment

from data_model import Dataset, load_dataset, load_schema
from evaluation import (
    distance_matrix,
    optimal_matching,
    random_baseline,
    random_guess,
    reconstruction_error,
    write_pairs_csv,
)
from tests.helpers import fixture, toy_data


class MatchingTests(unittest.TestCase):
    def test_cost_matches_scipy(self) -> None:
        rng = np.random.default_rng(0)
        for n in range(1, 9):
            matrix = rng.integers(0, 10, size=(n, n))
            rows, cols = linear_sum_assignment(matrix)
            match, cost = optimal_matching(matrix)
            self.assertEqual(cost, float(matrix[rows, cols].sum()))
            self.assertEqual(sorted(match), list(range(n)))

    def test_lexicographically_smallest_optimum(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            matrix = rng.integers(0, 3, size=(n, n))
            best_cost, best = None, None
            for perm in itertools.permutations(range(n)):
                cost = sum(int(matrix[r, perm[r]]) for r in range(n))
                if best_cost is None or cost < best_cost:
                    best_cost, best = cost, list(perm)
            match, cost = optimal_matching(matrix)
            self.assertEqual(cost, best_cost)
            self.assertEqual(match, best)

    def test_all_ties_give_identity(self) -> None:
        match, cost = optimal_matching(np.ones((5, 5)))
        self.assertEqual(match, [0, 1, 2, 3, 4])
        self.assertEqual(cost, 5.0)

    def test_invalid_matrices(self) -> None:
        with self.assertRaises(ValueError):
            optimal_matching(np.zeros((2, 3)))
        with self.assertRaises(ValueError):
            optimal_matching([[0, -1], [1, 0]])
        with self.assertRaises(ValueError):
            optimal_matching([[0, np.inf], [1, 0]])
        self.assertEqual(optimal_matching(np.zeros((0, 0))), ([], 0.0))


class ReconstructionErrorTests(unittest.TestCase):
    def test_toy_distances(self) -> None:
        data = toy_data()
        matrix = distance_matrix(data, data)
        self.assertEqual(matrix[0, 2], 2)
        self.assertEqual(matrix[0, 3], 2)
        self.assertTrue(np.all(np.diag(matrix) == 0))

    def test_shuffled_reconstruction_has_zero_error(self) -> None:
        truth = toy_data()
        order = [2, 0, 3, 1]
        report = reconstruction_error(truth, truth.subset(order))
        self.assertEqual(report.error, 0.0)
        self.assertEqual(report.cost, 0.0)
        self.assertEqual(report.permutation, order)

    def test_error_is_invariant_to_row_order(self) -> None:
        truth = toy_data()
        rows = truth.rows.copy()
        rows[:, 1] = 1 - rows[:, 1]
        recon = Dataset(truth.schema, rows, truth.labels)
        base = reconstruction_error(truth, recon).error
        for order in ([3, 2, 1, 0], [1, 3, 0, 2]):
            self.assertEqual(reconstruction_error(truth, recon.subset(order)).error, base)

    def test_units_and_fixed_permutation(self) -> None:
        truth = toy_data()
        rows = truth.rows.copy()
        rows[:, 0] = 1 - rows[:, 0]
        recon = Dataset(truth.schema, rows, truth.labels)
        identity = [0, 1, 2, 3]
        self.assertEqual(reconstruction_error(truth, recon, permutation=identity).error, 0.25)
        self.assertEqual(reconstruction_error(truth, recon, units=[0], permutation=identity).error, 1.0)
        self.assertEqual(reconstruction_error(truth, recon, units=[1, 2, 3], permutation=identity).error, 0.0)
        self.assertEqual(reconstruction_error(truth, recon).error, 0.25)
        with self.assertRaises(ValueError):
            reconstruction_error(truth, recon, permutation=[0, 0, 1, 2])
        with self.assertRaises(ValueError):
            reconstruction_error(truth, recon, units=[7])

    def test_onehot_group_counts_once(self) -> None:
        schema = load_schema(fixture("compas_schema.json"))
        truth = load_dataset(fixture("compas_sample.csv"), schema, "two_year_recid").subset([0])
        rows = truth.rows.copy()
        age = list(schema.groups[0])
        current = next(i for i in age if rows[0, i] == 1)
        rows[0, age] = 0
        rows[0, next(i for i in age if i != current)] = 1
        report = reconstruction_error(truth, Dataset(schema, rows, truth.labels))
        self.assertAlmostEqual(report.error, 1 / 12)

    def test_mismatched_sizes_rejected(self) -> None:
        truth = toy_data()
        with self.assertRaises(ValueError):
            reconstruction_error(truth, truth.subset([0, 1]))


class BaselineTests(unittest.TestCase):
    def test_random_guess_respects_schema(self) -> None:
        schema = load_schema(fixture("compas_schema.json"))
        guess = random_guess(schema, 40, np.random.default_rng(0))
        for group in schema.groups:
            np.testing.assert_array_equal(guess.rows[:, list(group)].sum(axis=1), np.ones(40))

    def test_baseline_is_reproducible_and_in_range(self) -> None:
        truth = toy_data()
        first = random_baseline(truth.schema, truth, runs=50, seed=4)
        self.assertEqual(first, random_baseline(truth.schema, truth, runs=50, seed=4))
        self.assertGreater(first, 0.0)
        self.assertLess(first, 0.5)
        with self.assertRaises(ValueError):
            random_baseline(truth.schema, truth, runs=0, seed=4)


class PairsCsvTests(unittest.TestCase):
    def test_pairs_file(self) -> None:
        truth = toy_data()
        recon = truth.subset([1, 0, 3, 2])
        report = reconstruction_error(truth, recon)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "pairs.csv")
            write_pairs_csv(report, truth, recon, path)
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0][:3], ["recon_index", "orig_index", "error"])
        self.assertEqual(len(rows), 5)
        self.assertEqual(rows[1][:2], ["0", "1"])


if __name__ == "__main__":
    unittest.main(verbosity=2)
