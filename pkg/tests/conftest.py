import numpy as np
import pytest

from zerocard.tables import ColumnDescriptor, ColumnKind, from_arrays


def make_numeric_table(values, table_id="t", column="x", null_mask=None):
    values = np.asarray(values, dtype=np.float64)
    cols = [
        ColumnDescriptor(
            column_id=column,
            name=column,
            data_type_text="double",
            kind=ColumnKind.NUMERICAL,
        )
    ]
    masks = None if null_mask is None else {column: np.asarray(null_mask, dtype=bool)}
    return from_arrays(table_id, cols, {column: values}, masks)


def make_mixed_table(num_values, cat_values, table_id="t", num_nulls=None, cat_nulls=None):
    num_values = np.asarray(num_values, dtype=np.float64)
    cat_values = np.asarray(list(cat_values), dtype=object)
    cols = [
        ColumnDescriptor("age", "age", "int", ColumnKind.NUMERICAL, comment_text="user age"),
        ColumnDescriptor("city", "city", "varchar", ColumnKind.CATEGORICAL),
    ]
    masks = {
        "age": np.zeros(len(num_values), dtype=bool) if num_nulls is None else np.asarray(num_nulls, bool),
        "city": np.zeros(len(cat_values), dtype=bool) if cat_nulls is None else np.asarray(cat_nulls, bool),
    }
    return from_arrays(table_id, cols, {"age": num_values, "city": cat_values}, masks)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
