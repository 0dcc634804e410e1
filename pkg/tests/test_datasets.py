import numpy as np
import pytest

from sdos.datasets import load_dataset, standardize_columns
from sdos.errors import EmptyDataset, ParseError
from sdos import models


def test_ionosphere_sample(data_dir):
    ds = load_dataset(data_dir / "ionosphere_sample.csv", "ionosphere")
    assert ds.n_rows == 10 and ds.features.shape == (10, 5)
    assert set(np.unique(ds.target)) == {0.0, 1.0}
    assert ds.columns[-1] == "class"
    m = models.ionosphere(ds)
    assert m.dim == 6


def test_concrete_sample_standardized(data_dir):
    ds = load_dataset(data_dir / "concrete_sample.csv", "concrete")
    assert ds.n_rows == 10
    assert np.all(np.abs(ds.features.mean(axis=0)) < 1e-12)
    assert np.all(np.abs(ds.features.var(axis=0) - 1) < 1e-12)
    assert abs(ds.target.mean()) < 1e-12
    raw = load_dataset(data_dir / "concrete_sample.csv", "concrete", standardize=False)
    assert raw.features[0, 0] == 239.2


def test_constant_column_is_centered_only():
    X = np.column_stack([np.full(4, 3.0), np.arange(4.0)])
    Z = standardize_columns(X)
    assert np.all(Z[:, 0] == 0.0)
    assert abs(Z[:, 1].var() - 1) < 1e-12


def test_malformed_cell_location(data_dir):
    with pytest.raises(ParseError) as info:
        load_dataset(data_dir / "malformed.csv", "concrete")
    assert info.value.row == 3 and info.value.column == 2
    assert "row 3, column 2" in str(info.value)


def test_header_only_is_empty(data_dir):
    with pytest.raises(EmptyDataset):
        load_dataset(data_dir / "header_only.csv", "concrete")


def test_bad_label_and_ragged_rows(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b,class\n1,2,g\n1,2,maybe\n")
    with pytest.raises(ParseError) as info:
        load_dataset(p, "ionosphere")
    assert (info.value.row, info.value.column) == (3, 3)
    p.write_text("a,b,class\n1,2\n")
    with pytest.raises(ParseError) as info:
        load_dataset(p, "ionosphere")
    assert info.value.row == 2
    with pytest.raises(ValueError):
        load_dataset(p, "other")
