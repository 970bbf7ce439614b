import numpy as np
import pytest

from ranrc.ingest import (
    SPAMBASE_FEATURES,
    Dataset,
    MalformedRowError,
    bundled_spambase_path,
    load_spambase,
    partition_dataset,
    resolve_dataset_path,
)


def write_rows(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n")
    return path


def row(first, label, width=57):
    return [first, first + 1, first + 2] + [0] * (width - 3) + [label]


def test_bundled_spambase_shape():
    d = load_spambase()
    assert d.features.shape == (4597, 3)
    assert set(np.unique(d.labels)) == {-1.0, 1.0}
    assert int((d.labels == 1).sum()) == 1812


def test_bundled_columns_are_make_address_all():
    # first row of the file: word_freq_make, word_freq_address, word_freq_all
    first = bundled_spambase_path().read_text().splitlines()[0].split(",")
    d = load_spambase()
    assert np.allclose(d.features[0], [float(v) for v in first[:3]])
    assert SPAMBASE_FEATURES == (0, 1, 2)


def test_labels_mapped_to_signs(tmp_path):
    p = write_rows(tmp_path / "two.data", [row(1, 1), row(4, 0)])
    d = load_spambase(p)
    assert d.labels.tolist() == [1.0, -1.0]
    assert d.features.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_feature_columns_in_requested_order(tmp_path):
    p = write_rows(tmp_path / "two.data", [row(1, 1), row(4, 0)])
    assert load_spambase(p, [2, 0]).features.tolist() == [[3, 1], [6, 4]]


def test_non_numeric_cell_names_row(tmp_path):
    rows = [row(1, 1), row(2, 0)]
    rows[1][5] = "oops"
    p = write_rows(tmp_path / "bad.data", rows)
    with pytest.raises(MalformedRowError, match="row 2") as info:
        load_spambase(p)
    assert info.value.row == 2


def test_ragged_row_rejected(tmp_path):
    p = write_rows(tmp_path / "bad.data", [row(1, 1), row(2, 0)[:-3] + [1]])
    with pytest.raises(MalformedRowError):
        load_spambase(p)


def test_label_outside_zero_one(tmp_path):
    p = write_rows(tmp_path / "bad.data", [row(1, 2)])
    with pytest.raises(MalformedRowError, match="label"):
        load_spambase(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_spambase(tmp_path / "nope.data")


def test_env_var_fallback(tmp_path, monkeypatch):
    p = write_rows(tmp_path / "env.data", [row(1, 0)])
    monkeypatch.setenv("RANRC_DATA", str(p))
    assert resolve_dataset_path(None) == p
    assert load_spambase().labels.tolist() == [-1.0]
    explicit = tmp_path / "x.data"
    assert resolve_dataset_path(explicit) == explicit


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 3)), np.array([1.0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 3)), np.array([0.0]))


def test_standardized_columns():
    d = load_spambase().standardized()
    assert np.allclose(d.features.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(d.features.std(axis=0), 1)


def test_partition_is_exact():
    d = load_spambase()
    parts = partition_dataset(d, 10, seed=5)
    assert len(parts) == 10
    allrows = np.concatenate(parts)
    assert np.array_equal(np.sort(allrows), np.arange(len(d)))


def test_single_node_gets_everything():
    parts = partition_dataset(100, 1, seed=0)
    assert len(parts) == 1 and np.array_equal(parts[0], np.arange(100))


def test_partition_seeds():
    a = partition_dataset(4597, 10, seed=1)
    b = partition_dataset(4597, 10, seed=1)
    c = partition_dataset(4597, 10, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    # both draws come from the same binomial size law: around 460 rows per node
    for parts in (a, c):
        sizes = np.array([p.size for p in parts])
        assert np.all(np.abs(sizes - 459.7) < 6 * np.sqrt(4597 * 0.1 * 0.9))


def test_balanced_partition_sizes():
    sizes = [p.size for p in partition_dataset(103, 10, seed=3, balanced=True)]
    assert sorted(sizes) == [10] * 7 + [11] * 3


def test_partition_rejects_zero_nodes():
    with pytest.raises(ValueError):
        partition_dataset(10, 0, seed=0)


def test_reload_and_repartition_identical():
    a, b = load_spambase(), load_spambase()
    assert a.features.tobytes() == b.features.tobytes()
    pa, pb = partition_dataset(a, 10, 9), partition_dataset(b, 10, 9)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(pa, pb))
