import numpy as np
import pytest

from jointcast import data as D


def test_gen_sine_examples():
    s = D.gen_sine(100, 16, amplitude=2.0)
    assert s.values[4] == pytest.approx(2.0)
    np.testing.assert_allclose(D.gen_sine(50, 7, amplitude=0.0, trend_slope=1.0).values,
                               np.arange(50.0))
    a = D.gen_sine(64, 8, noise_std=0.3, seed=5).values
    np.testing.assert_array_equal(a, D.gen_sine(64, 8, noise_std=0.3, seed=5).values)


def test_gen_random_walk():
    x = D.gen_random_walk(200, seed=1).values
    assert x[0] == 0.0
    np.testing.assert_array_equal(np.abs(np.diff(x)), 1.0)
    np.testing.assert_array_equal(x, D.gen_random_walk(200, seed=1).values)


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_csv_ok(tmp_path):
    p = _write(tmp_path, "ts,value,other\n1,1.5,0\n2,2.5,1\n3,-3,2\n")
    (s,) = D.load_csv(p, "value", "ts")
    np.testing.assert_array_equal(s.values, [1.5, 2.5, -3.0])
    assert s.timestamps.tolist() == [1, 2, 3]
    both = D.load_csv(p, ["value", "other"])
    assert [len(x) for x in both] == [3, 3]


def test_load_csv_iso_timestamps(tmp_path):
    p = _write(tmp_path, "ts,value\n2024-01-01T00:00,1\n2024-01-01T01:00,2\n")
    (s,) = D.load_csv(p, "value", "ts")
    assert len(s) == 2


def test_load_csv_errors(tmp_path):
    p = _write(tmp_path, "ts,value\n1,1\n2,abc\n3,3\n")
    with pytest.raises(D.ValueParseError, match="row 2") as exc:
        D.load_csv(p, "value")
    assert exc.value.row == 2
    p = _write(tmp_path, "ts,value\n2,1\n1,2\n3,3\n")
    with pytest.raises(D.TimestampOrderError):
        D.load_csv(p, "value", "ts")
    with pytest.raises(D.MissingColumnError):
        D.load_csv(p, "nope")
    p = _write(tmp_path, "ts,value\n1,\n")
    with pytest.raises(D.ValueParseError):
        D.load_csv(p, "value")


def test_split_windows_counts():
    s = D.Series(np.arange(8.0))
    assert len(D.split_windows(s, 4, 2, 2)) == 2
    assert len(D.split_windows(s, 4, 2, 8)) == 1
    (w,) = D.split_windows(s, 5, 3, 1)
    np.testing.assert_array_equal(np.concatenate([w.insample, w.actual]), s.values)
    with pytest.raises(D.InsufficientDataError):
        D.split_windows(s, 6, 3, 1)


def test_holdout_split_has_no_leakage():
    s = D.Series(np.arange(1000.0))
    train, hold = D.holdout_split(s, 100, 20, 5)
    windows = D.split_windows(hold, 100, 20, 20)
    assert len(windows) == 5
    last_train = train.values[-1]
    assert all(w.actual.min() > last_train for w in windows)


def test_series_validation():
    with pytest.raises(ValueError):
        D.Series([])
    with pytest.raises(ValueError):
        D.Series([1.0, 2.0], timestamps=[2, 1])
