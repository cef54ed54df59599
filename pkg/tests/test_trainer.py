import unittest

import numpy as np

from data_model import Dataset, load_dataset, load_schema
from forest import accuracy, recount, tree_counts, validate_forest
from trainer import TrainParams, bootstrap_sample, train_forest
from tests.helpers import fixture, random_binary_dataset


class TrainParamsTests(unittest.TestCase):
    def test_invalid_params_rejected(self) -> None:
        with self.assertRaises(ValueError):
            TrainParams(n_trees=0)
        with self.assertRaises(ValueError):
            TrainParams(n_trees=1, max_depth=0)
        with self.assertRaises(ValueError):
            TrainParams(n_trees=1, max_features="log2")
        with self.assertRaises(ValueError):
            TrainParams(n_trees=1, max_features=True)

    def test_resolve_max_features(self) -> None:
        self.assertEqual(TrainParams(n_trees=1).resolve_max_features(15), 4)
        self.assertEqual(TrainParams(n_trees=1, max_features=None).resolve_max_features(15), 15)
        self.assertEqual(TrainParams(n_trees=1, max_features=0.5).resolve_max_features(15), 7)


class TrainerTests(unittest.TestCase):
    def setUp(self) -> None:
        self.data = load_dataset(fixture("compas_sample.csv"), load_schema(fixture("compas_schema.json")), "two_year_recid")

    def test_no_bagging_counts_match_training_set(self) -> None:
        forest = train_forest(self.data, TrainParams(n_trees=3, max_depth=4, bootstrap=False, seed=1))
        self.assertTrue(validate_forest(forest).ok)
        self.assertFalse(forest.trained_with_bagging)
        self.assertEqual(forest.n_examples, self.data.n_examples)
        for tree in forest.trees:
            np.testing.assert_array_equal(recount(tree, self.data.rows, self.data.labels), tree_counts(tree))
            self.assertLessEqual(tree.max_depth, 4)

    def test_bagging_counts_match_bootstrap_multiplicities(self) -> None:
        forest = train_forest(self.data, TrainParams(n_trees=2, bootstrap=True, seed=5))
        self.assertTrue(validate_forest(forest).ok)
        for t, tree in enumerate(forest.trees):
            rng = np.random.default_rng([5, t])
            mult = np.bincount(np.sort(rng.integers(0, self.data.n_examples, size=self.data.n_examples)), minlength=self.data.n_examples)
            np.testing.assert_array_equal(recount(tree, self.data.rows, self.data.labels, mult), tree_counts(tree))
            self.assertEqual(sum(tree.nodes[tree.root].counts), self.data.n_examples)

    def test_same_seed_same_forest(self) -> None:
        params = TrainParams(n_trees=2, max_depth=3, bootstrap=True, seed=9)
        self.assertEqual(train_forest(self.data, params).trees, train_forest(self.data, params).trees)

    def test_excluded_feature_never_split(self) -> None:
        forest = train_forest(self.data, TrainParams(n_trees=4, bootstrap=False, seed=0, excluded_features=(0, 4)))
        used = {node.feature for tree in forest.trees for node in tree.nodes if not node.is_leaf}
        self.assertTrue(used)
        self.assertNotIn(0, used)
        self.assertNotIn(4, used)

    def test_separable_label_is_learned(self) -> None:
        base = random_binary_dataset(12, 6, seed=2)
        data = Dataset(base.schema, base.rows, base.rows[:, 0].astype(int))
        forest = train_forest(data, TrainParams(n_trees=3, max_features=None, bootstrap=False, seed=0))
        self.assertEqual(accuracy(forest, data), 1.0)
        for tree in forest.trees:
            self.assertEqual(tree.nodes[tree.root].feature, 0)

    def test_single_class_set_rejected(self) -> None:
        base = random_binary_dataset(6, 3, seed=4)
        one_class = Dataset(base.schema, base.rows, np.zeros(6, dtype=int))
        with self.assertRaises(ValueError):
            train_forest(one_class, TrainParams(n_trees=1, bootstrap=False, seed=0))

        single = Dataset(base.schema, base.rows[:1], np.zeros(1, dtype=int))
        forest = train_forest(single, TrainParams(n_trees=2, bootstrap=False, seed=0))
        self.assertEqual(forest.n_examples, 1)
        self.assertTrue(validate_forest(forest).ok)

    def test_bootstrap_sample_sorted_with_replacement(self) -> None:
        draws = bootstrap_sample(50, seed=1)
        self.assertEqual(len(draws), 50)
        self.assertTrue(np.all(np.diff(draws) >= 0))
        self.assertLess(len(set(draws.tolist())), 50)


if __name__ == "__main__":
    unittest.main(verbosity=2)
