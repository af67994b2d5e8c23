import numpy as np
import pytest

from stratperm.dataset import Dataset, ar_offset, load_csv, validate_rank, write_csv
from stratperm.errors import DimensionMismatch, MissingColumn, NonNumericCell, RankDeficient


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_basic_counts(tmp_path):
    f = _write(tmp_path / "d.csv", "y,x1,z1\n1,0.5,0\n2,1.5,1\n3,0.1,0\n4,2.0,1\n5,3.3,2\n")
    d = load_csv(f, ["x1"], ["z1"], "y")
    assert (d.n, d.k, d.p) == (5, 1, 2)
    assert np.all(d.Z[:, 0] == 1.0)
    assert d.z_names == ("const", "z1")


def test_non_numeric_cell_names_row_and_column(tmp_path):
    f = _write(tmp_path / "d.csv", "y,x1,z1\n1,0.5,0\n2,abc,1\n3,0.1,0\n")
    with pytest.raises(NonNumericCell) as err:
        load_csv(f, ["x1"], ["z1"], "y")
    assert err.value.row == 2 and err.value.col == "x1"
    assert "abc" in str(err.value)


def test_missing_column(tmp_path):
    f = _write(tmp_path / "d.csv", "y,x1\n1,2\n3,4\n")
    with pytest.raises(MissingColumn):
        load_csv(f, ["x1"], ["z9"], "y")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "absent.csv", ["x"], [], "y")


def test_z_duplicating_intercept_is_rank_deficient(tmp_path):
    f = _write(tmp_path / "d.csv", "y,x1,z1\n1,0.5,1\n2,1.5,1\n3,0.1,1\n4,2.0,1\n")
    with pytest.raises(RankDeficient) as err:
        load_csv(f, ["x1"], ["z1"], "y")
    assert err.value.deficiency == 1


def test_x_copy_of_z_column_is_rank_deficient(rng):
    z = rng.standard_normal(10)
    d = Dataset(rng.standard_normal(10), z.copy(), np.column_stack([np.ones(10), z]))
    with pytest.raises(RankDeficient):
        validate_rank(d)


def test_identity_like_design_passes():
    X = np.array([[1.0], [-1.0], [0.0], [0.0]])
    Z = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
    validate_rank(Dataset(np.arange(4.0), X, Z))


def test_near_collinear_rejected_with_svd_oracle(rng):
    z = rng.standard_normal(12)
    x = z + 1e-14 * rng.standard_normal(12)
    d = Dataset(rng.standard_normal(12), x, np.column_stack([np.ones(12), z]))
    sv = np.linalg.svd(np.column_stack([x, np.ones(12), z]), compute_uv=False)
    assert sv[-1] / sv[0] < 1e-10
    with pytest.raises(RankDeficient):
        validate_rank(d, tol=1e-10)


def test_ar_offset_examples():
    y = np.array([1.0, 2.0])
    assert np.array_equal(ar_offset(y, np.ones((2, 1)), [0.0]), y)
    assert np.array_equal(ar_offset(y, np.ones((2, 1)), [2.0]), np.array([-1.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        ar_offset(y, np.ones((2, 2)), [1.0])


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones(3), np.ones((3, 1)), np.column_stack([np.zeros(3), np.arange(3.0)]))
    with pytest.raises(ValueError):
        Dataset(np.ones(3), np.ones((4, 1)), np.ones((3, 1)))
    with pytest.raises(ValueError):
        Dataset(np.array([1.0, np.nan, 2.0]), np.arange(3.0), np.ones((3, 1)))


def test_dataset_arrays_are_read_only(rng):
    d = Dataset(rng.standard_normal(4), rng.standard_normal(4), np.ones((4, 1)))
    with pytest.raises(ValueError):
        d.y[0] = 1.0


def test_csv_round_trip_is_lossless(tmp_path, rng):
    n = 25
    Z = np.column_stack([np.ones(n), rng.integers(0, 3, n), rng.standard_normal(n)])
    d = Dataset(rng.standard_normal(n) * 1e5, rng.standard_normal((n, 2)) / 3, Z,
                ("a", "b"), ("const", "z1", "z2"), "out")
    f = tmp_path / "rt.csv"
    write_csv(d, f)
    back = load_csv(f, ["a", "b"], ["z1", "z2"], "out")
    assert np.array_equal(back.y, d.y)
    assert np.array_equal(back.X, d.X)
    assert np.array_equal(back.Z, d.Z)
