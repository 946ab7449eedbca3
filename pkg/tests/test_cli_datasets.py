import logging

import numpy as np
import pytest

from subspace_inference import DataError, Dataset
from subspace_inference.cli.datasets import (
    SYNTH_INTERVALS,
    in_data_region,
    in_gap,
    load_csv_dataset,
    save_csv_dataset,
    split_indices,
    standardize,
    synth_function,
    synth_regression,
)

HAND_CSV = "a,b,target\n1,2,3\n4.5,-5,6\n7,8e-1,9\n"


def test_hand_csv_parses_exactly(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HAND_CSV)
    data = load_csv_dataset(path)
    np.testing.assert_array_equal(data.inputs, [[1, 2], [4.5, -5], [7, 0.8]])
    np.testing.assert_array_equal(data.targets, [3, 6, 9])
    assert data.column_names == ("a", "b", "target")


def test_target_column_by_name_or_index(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(HAND_CSV)
    by_name = load_csv_dataset(path, "a")
    np.testing.assert_array_equal(by_name.targets, [1, 4.5, 7])
    np.testing.assert_array_equal(by_name.inputs[:, 0], [2, -5, 0.8])
    by_index = load_csv_dataset(path, 1)
    np.testing.assert_array_equal(by_index.targets, [2, -5, 0.8])
    with pytest.raises(DataError):
        load_csv_dataset(path, "missing")
    with pytest.raises(DataError):
        load_csv_dataset(path, 7)


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(DataError) as info:
        load_csv_dataset(path)
    assert info.value.line == 3
    path.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError) as info:
        load_csv_dataset(path)
    assert info.value.line == 3


def test_empty_file_is_a_data_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataError):
        load_csv_dataset(path)


def test_standardized_columns_have_zero_mean_unit_std(tmp_path, rng):
    path = tmp_path / "d.csv"
    x = rng.normal(5.0, 3.0, (50, 3))
    y = rng.normal(-2.0, 7.0, 50)
    save_csv_dataset(Dataset(x, y, column_names=("p", "q", "r", "y")), path)
    data = load_csv_dataset(path, "y", standardize_data=True)
    assert np.all(np.abs(data.inputs.mean(axis=0)) < 1e-10)
    np.testing.assert_allclose(data.inputs.std(axis=0), 1.0, atol=1e-10)
    assert abs(data.targets.mean()) < 1e-10 and abs(data.targets.std() - 1.0) < 1e-10
    assert data.target_std == pytest.approx(y.std(), rel=1e-12)


def test_saved_standardized_file_round_trips(tmp_path, rng):
    src = tmp_path / "raw.csv"
    save_csv_dataset(Dataset(rng.standard_normal((20, 2)), rng.standard_normal(20), column_names=("u", "v", "w")), src)
    data = load_csv_dataset(src, standardize_data=True)
    out = tmp_path / "std.csv"
    save_csv_dataset(data, out)
    again = load_csv_dataset(out)
    np.testing.assert_array_equal(again.inputs, data.inputs)
    np.testing.assert_array_equal(again.targets, data.targets)


def test_constant_column_keeps_unit_std_with_warning(caplog):
    x = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    with caplog.at_level(logging.WARNING):
        (data,) = standardize(Dataset(x, np.arange(5.0)))
    assert "constant" in caplog.text
    assert data.input_std[0] == 1.0
    np.testing.assert_array_equal(data.inputs[:, 0], 0.0)


def test_standardize_applies_training_statistics_to_others(rng):
    train = Dataset(rng.normal(2, 3, (30, 2)), rng.normal(1, 2, 30))
    test = Dataset(rng.normal(2, 3, (5, 2)), rng.normal(1, 2, 5))
    tr, te = standardize(train, test)
    np.testing.assert_allclose(te.inputs, (test.inputs - train.inputs.mean(0)) / train.inputs.std(0))
    assert te.target_mean == tr.target_mean


def test_split_indices_partition():
    train, test = split_indices(100, 0.1, np.random.default_rng(0))
    assert len(test) == 10 and len(train) == 90
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(100))
    with pytest.raises(ValueError):
        split_indices(5, 0.01, np.random.default_rng(0))


def test_synthetic_data_layout():
    data = synth_regression(seed=3)
    assert len(data) == 400
    x = data.inputs[:, 0]
    assert np.all(in_data_region(x)) and not np.any(in_gap(x))
    for lo, hi in SYNTH_INTERVALS:
        assert np.any((x >= lo) & (x <= hi))


def test_synthetic_noise_free_targets_are_the_teacher():
    data = synth_regression(n_points=50, noise_std=0.0, seed=1)
    np.testing.assert_array_equal(data.targets, synth_function(data.inputs[:, 0], 1))
    again = synth_function(np.repeat(data.inputs[:1, 0], 3), 1)
    assert np.all(again == again[0])


def test_synthetic_is_seeded():
    a, b = synth_regression(seed=4), synth_regression(seed=4)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)
    with pytest.raises(ValueError):
        synth_regression(noise_std=-1.0)
