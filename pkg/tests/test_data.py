import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invmatch.data import EnvDataset, check_dims, env_column, pooled_X, pooled_Y, read_csv, write_csv
from invmatch.errors import SchemaError


def test_dataset_validation():
    with pytest.raises(ValueError):
        EnvDataset(1, np.zeros((3,)))
    with pytest.raises(ValueError):
        EnvDataset(1, np.zeros((3, 2)), np.zeros(4))
    ds = EnvDataset("a", np.zeros((3, 2)), np.ones(3))
    assert (ds.n, ds.d, ds.has_y) == (3, 2, True)
    assert not ds.without_y().has_y
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_pooling_helpers():
    a = EnvDataset(1, np.ones((2, 2)), [1.0, 2.0])
    b = EnvDataset(2, np.zeros((1, 2)), [3.0])
    assert pooled_X([a, b]).shape == (3, 2)
    np.testing.assert_array_equal(pooled_Y([a, b]), [1.0, 2.0, 3.0])
    assert env_column([a, b]) == [1, 1, 2]
    with pytest.raises(ValueError):
        check_dims([a, EnvDataset(3, np.zeros((1, 3)))])
    with pytest.raises(ValueError):
        pooled_Y([a, b.without_y()])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(1, 6), min_size=1, max_size=4), st.booleans(), st.integers(0, 999))
def test_csv_roundtrip(d, sizes, with_y, seed):
    rng = np.random.default_rng(seed)
    data = [
        EnvDataset(f"e{i}", rng.standard_normal((n, d)), rng.standard_normal(n) if with_y else None)
        for i, n in enumerate(sizes)
    ]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.csv"
        assert write_csv(data, path) == sum(sizes)
        table = read_csv(path)
    assert table.n_rows == sum(sizes)
    assert table.has_y == with_y
    for a, b in zip(data, table.datasets):
        assert a.env_label == b.env_label
        np.testing.assert_array_equal(a.X, b.X)  # repr round-trips exactly
        if with_y:
            np.testing.assert_array_equal(a.Y, b.Y)


def test_interleaved_rows_scatter_back(tmp_path):
    path = tmp_path / "mix.csv"
    path.write_text("env,x1,y\nb,1,10\na,2,20\nb,3,30\n\na,4,40\n")
    table = read_csv(path)
    assert [ds.env_label for ds in table.datasets] == ["b", "a"]
    np.testing.assert_array_equal(table.datasets[0].X[:, 0], [1, 3])
    pooled = np.concatenate([ds.Y for ds in table.datasets])
    np.testing.assert_array_equal(table.scatter(pooled), [10, 20, 30, 40])
    assert table.env_per_row() == ["b", "a", "b", "a"]


@pytest.mark.parametrize(
    "text",
    [
        "",
        "x1,env\n1,a\n",
        "env,x2\na,1\n",
        "env,x1,y\na,1\n",
        "env,x1\na,notanumber\n",
        "env,x1\n",
    ],
)
def test_schema_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(SchemaError):
        read_csv(path)
