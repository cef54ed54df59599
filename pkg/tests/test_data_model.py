import os
import tempfile
import unittest

import numpy as np

from data_model import (
    Attribute,
    AttributeKind,
    AttributeSchema,
    Dataset,
    DatasetError,
    OneHotViolation,
    binary_schema,
    load_dataset,
    load_schema,
    sample_training_set,
    save_dataset,
    save_schema,
)
from tests.helpers import fixture, toy_data


class SchemaTests(unittest.TestCase):
    def test_compas_units_count_groups_once(self) -> None:
        schema = load_schema(fixture("compas_schema.json"))
        units = schema.units()
        self.assertEqual(schema.n_attributes, 15)
        self.assertEqual(len(units), 12)
        self.assertIn((1, 2, 3), units)
        self.assertIn((11, 12), units)
        self.assertEqual(schema.group_of(12), 1)
        self.assertIsNone(schema.group_of(0))
        self.assertTrue(schema.is_binary_only())

    def test_group_member_must_be_declared_onehot(self) -> None:
        attrs = (Attribute("a", AttributeKind.binary()), Attribute("b", AttributeKind.binary()))
        with self.assertRaises(ValueError):
            AttributeSchema(attrs, ((0, 1),))

    def test_single_member_group_rejected(self) -> None:
        attrs = (Attribute("a", AttributeKind.one_hot(0)), Attribute("b", AttributeKind.binary()))
        with self.assertRaises(ValueError):
            AttributeSchema(attrs, ((0,),))

    def test_ordinal_domain_must_increase(self) -> None:
        with self.assertRaises(ValueError):
            AttributeKind.ordinal([1, 3, 2])

    def test_duplicate_names_rejected(self) -> None:
        with self.assertRaises(ValueError):
            binary_schema(["x", "x"])

    def test_save_and_load_schema(self) -> None:
        schema = AttributeSchema(
            (
                Attribute("age", AttributeKind.ordinal([1, 2, 3])),
                Attribute("income", AttributeKind.numerical(0.0, 10.0)),
                Attribute("flag", AttributeKind.binary()),
            ),
            (),
            3,
        )
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "schema.json")
            save_schema(schema, path)
            self.assertEqual(load_schema(path), schema)
        self.assertEqual(schema.positions(0), 3)
        self.assertTrue(schema.has_numerical())
        with self.assertRaises(ValueError):
            schema.positions(1)


class DatasetTests(unittest.TestCase):
    def test_load_toy_data(self) -> None:
        data = toy_data()
        self.assertEqual(data.n_examples, 4)
        self.assertEqual(data.n_attributes, 4)
        self.assertEqual(data.class_histogram(), [2, 2])
        self.assertEqual(data.rows[3].tolist(), [1.0, 0.0, 1.0, 1.0])

    def test_onehot_violation(self) -> None:
        schema = load_schema(fixture("compas_schema.json"))
        row = np.zeros((1, 15))
        row[0, 2] = 1
        # Charge group left empty.
        with self.assertRaises(OneHotViolation) as ctx:
            Dataset(schema, row, [0])
        self.assertEqual(ctx.exception.group, 1)

    def test_non_binary_value_rejected(self) -> None:
        with self.assertRaises(DatasetError):
            Dataset(binary_schema(["a"]), [[2.0]], [0])

    def test_label_out_of_range(self) -> None:
        with self.assertRaises(DatasetError):
            Dataset(binary_schema(["a"]), [[1.0]], [2])

    def test_arrays_are_read_only(self) -> None:
        data = toy_data()
        with self.assertRaises(ValueError):
            data.rows[0, 0] = 1.0

    def test_missing_class_column(self) -> None:
        schema = load_schema(fixture("toy_schema.json"))
        with self.assertRaises(DatasetError):
            load_dataset(fixture("toy.csv"), schema, class_column="label")

    def test_save_then_load_keeps_rows(self) -> None:
        data = load_dataset(fixture("compas_sample.csv"), load_schema(fixture("compas_schema.json")), "two_year_recid")
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out.csv")
            save_dataset(data, path, "two_year_recid")
            again = load_dataset(path, data.schema, "two_year_recid")
        self.assertTrue(data.equals(again))

    def test_sample_training_set_partitions(self) -> None:
        data = load_dataset(fixture("compas_sample.csv"), load_schema(fixture("compas_schema.json")), "two_year_recid")
        train, holdout = sample_training_set(data, 25, seed=3)
        self.assertEqual(train.n_examples, 25)
        self.assertEqual(holdout.n_examples, data.n_examples - 25)
        again, _ = sample_training_set(data, 25, seed=3)
        self.assertTrue(train.equals(again))
        with self.assertRaises(ValueError):
            sample_training_set(data, 0, seed=0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
