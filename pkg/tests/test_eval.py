import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from uwbsense.evaluation import (UndefinedMetricWarning, classification_metrics, confusion_matrix,
                                 error_cdf, localization_errors, localization_metrics,
                                 metrics_from_confusion, moving_average, read_csv_table,
                                 trajectory_overlay, write_cdf_csv, write_confusion_csv,
                                 write_metrics_csv, write_trajectory_csv)


def test_localization_closed_form():
    m = localization_metrics([0.1, 0.2, 0.3])
    assert m.mean == pytest.approx(0.2)
    assert m.median == pytest.approx(0.2)
    assert m.std == pytest.approx(np.sqrt(2 / 300))
    assert m.p80 == pytest.approx(0.26)
    assert m.max == pytest.approx(0.3) and m.n == 3


def test_all_equal_errors():
    m = localization_metrics([0.4] * 7)
    assert m.std == pytest.approx(0, abs=1e-15)
    assert [m.mean, m.median, m.p80, m.max] == pytest.approx([0.4] * 4)


def test_localization_errors_euclidean():
    e = localization_errors([[0, 0], [1, 1]], [[3, 4], [1, 1]])
    assert np.allclose(e, [5, 0])
    with pytest.raises(ValueError):
        localization_errors([[0, 0]], [[0, 0], [1, 1]])


@pytest.mark.parametrize("bad", [[], [0.1, -0.1], [np.nan]])
def test_invalid_errors(bad):
    with pytest.raises(ValueError):
        localization_metrics(bad)


def test_two_class_closed_form():
    m = metrics_from_confusion(np.array([[8, 2], [1, 9]]))
    assert m.precision[0] == pytest.approx(8 / 9)
    assert m.recall[0] == pytest.approx(0.8)
    assert m.precision[1] == pytest.approx(9 / 11)
    assert m.recall[1] == pytest.approx(0.9)
    assert m.f1[0] == pytest.approx(2 * (8 / 9) * 0.8 / (8 / 9 + 0.8))
    assert m.accuracy == pytest.approx(0.85)
    assert list(m.support) == [10, 10]


def test_random_three_class_against_formula():
    rng = np.random.default_rng(0)
    true = rng.integers(0, 3, 400)
    pred = np.where(rng.random(400) < 0.7, true, rng.integers(0, 3, 400))
    m = classification_metrics(pred, true, 3)
    for k in range(3):
        tp = np.sum((pred == k) & (true == k))
        p = tp / np.sum(pred == k)
        r = tp / np.sum(true == k)
        assert m.precision[k] == pytest.approx(p)
        assert m.recall[k] == pytest.approx(r)
        assert m.f1[k] == pytest.approx(2 * p * r / (p + r))
    assert m.accuracy == pytest.approx(np.mean(pred == true))
    assert m.macro_f1 == pytest.approx(m.f1.mean())
    again = metrics_from_confusion(m.confusion)
    assert np.array_equal(again.f1, m.f1)


def test_confusion_orientation_and_errors():
    cm = confusion_matrix([1, 1, 0], [0, 1, 0], 2)
    assert cm.tolist() == [[1, 1], [0, 1]]  # rows are the true class
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 2], [0, 1], 2)


def test_zero_predicted_class_warns():
    with pytest.warns(UndefinedMetricWarning):
        m = classification_metrics([0, 0, 0], [0, 1, 0], 2)
    assert m.precision[1] == 0 and m.zero_predicted == (1,)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        classification_metrics([0, 1], [0, 1], 2)


def test_cdf_examples():
    cdf = error_cdf([0.3, 0.1, 0.2, 0.4])
    assert cdf[:, 0].tolist() == [0.1, 0.2, 0.3, 0.4]
    assert cdf[:, 1].tolist() == [0.25, 0.5, 0.75, 1.0]


@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 20)))
def test_cdf_properties(e):
    cdf = error_cdf(e)
    assert np.all(np.diff(cdf[:, 0]) >= 0) and np.all(np.diff(cdf[:, 1]) > 0)
    assert cdf[-1, 1] == 1.0
    # linear-interpolated p80 lies between the order statistics around rank 0.8 (n - 1)
    p80 = localization_metrics(e).p80
    k = int(np.floor(0.8 * (len(e) - 1)))
    assert cdf[k, 0] <= p80 <= cdf[min(k + 1, len(e) - 1), 0]


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 10)), st.randoms())
def test_permutation_invariance(e, r):
    perm = list(e)
    r.shuffle(perm)
    a, b = localization_metrics(e), localization_metrics(perm)
    assert (a.median, a.p80, a.max, a.n) == (b.median, b.p80, b.max, b.n)
    # mean and std only differ by summation order
    assert a.mean == pytest.approx(b.mean, rel=1e-12, abs=1e-15)
    assert a.std == pytest.approx(b.std, rel=1e-9, abs=1e-12)


def test_moving_average():
    a = np.arange(10, dtype=float)
    assert np.array_equal(moving_average(a, 1), a)
    assert np.allclose(moving_average(np.full(6, 2.5), 4), 2.5)
    out = moving_average(a, 5)
    assert np.allclose(out[2:-2], a[2:-2])  # linear ramp is preserved away from edges
    assert out[0] == pytest.approx(1.0)  # mean of 0, 1, 2
    assert out[-1] == pytest.approx(8.0)
    with pytest.raises(ValueError):
        moving_average(a, 0)
    xy = np.column_stack([a, -a])
    assert np.allclose(moving_average(xy, 3)[:, 1], -moving_average(a, 3))


def test_trajectory_overlay():
    p = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    t = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]])
    o = trajectory_overlay(p, t, 1, times=[10, 11, 12])
    assert o.shape == (3, 7)
    assert np.array_equal(o[:, 0], [10, 11, 12])
    assert np.array_equal(o[:, 3:5], o[:, 5:7])
    with pytest.raises(ValueError):
        trajectory_overlay(p[:2], t)
    with pytest.raises(ValueError):
        trajectory_overlay(p, t, times=[0, 1])


def test_csv_writers(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", localization_metrics([0.1, 0.2, 0.3]))
    head, rows = read_csv_table(tmp_path / "m.csv")
    assert head == ["metric", "value"]
    assert dict(rows)["mean"] == "0.2" and dict(rows)["n"] == "3"
    write_cdf_csv(tmp_path / "c.csv", error_cdf([0.5, 0.25]))
    assert read_csv_table(tmp_path / "c.csv") == (["error_m", "fraction"], [["0.25", "0.5"], ["0.5", "1"]])
    o = trajectory_overlay(np.zeros((4, 2)), np.ones((4, 2)))
    write_trajectory_csv(tmp_path / "t.csv", o)
    head, rows = read_csv_table(tmp_path / "t.csv")
    assert head[0] == "t" and len(rows) == 4 and rows[0][1] == "1"
    write_confusion_csv(tmp_path / "cm.csv", np.array([[3, 1], [0, 2]]), ["a", "b"])
    assert read_csv_table(tmp_path / "cm.csv") == (["true\\pred", "a", "b"], [["a", "3", "1"], ["b", "0", "2"]])
    cls = classification_metrics([0, 1, 1], [0, 1, 1], 2)
    write_metrics_csv(tmp_path / "cls.csv", cls)
    assert dict(read_csv_table(tmp_path / "cls.csv")[1])["accuracy"] == "1"


def test_plots_render(tmp_path):
    from uwbsense import plots
    e = np.random.default_rng(1).random(50)
    assert plots.plot_cdf(error_cdf(e), tmp_path / "c.png", 0.5).stat().st_size > 1000
    o = trajectory_overlay(np.random.default_rng(2).random((20, 2)), np.ones((20, 2)))
    plots.plot_trajectory(o, tmp_path / "t.png", (6.0, 6.0))
    plots.plot_confusion(np.array([[3, 1], [0, 2]]), tmp_path / "cm.png", ["a", "b"])
    plots.plot_history([{"epoch": 1, "train_loss": 1, "val_loss": 2}], tmp_path / "h.png")
    for name in ("t.png", "cm.png", "h.png"):
        assert (tmp_path / name).read_bytes()[:4] == b"\x89PNG"
    plots.plot_cdf(error_cdf(e), tmp_path / "c2.png", 0.5)
    assert (tmp_path / "c.png").read_bytes() == (tmp_path / "c2.png").read_bytes()
