import numpy as np
import pytest

from bleedsense.tinynn.metrics import EvalReport, evaluate, export_features, report_from_predictions


class Constant:
    def __init__(self, k):
        self.k = k

    def predict(self, X):
        return np.full(len(X), self.k)


def test_majority_predictor():
    y = np.array([0, 0, 0, 1, 2, 3])
    r = evaluate(Constant(0), np.zeros((6, 6, 24)), y)
    assert r.accuracy == pytest.approx(0.5)
    assert r.interference_recall == 1.0
    assert r.interference_precision == pytest.approx(0.5)


def test_perfect_predictions():
    y = np.repeat(np.arange(6), 4)
    r = report_from_predictions(y, y)
    assert np.array_equal(r.confusion, 4 * np.eye(6, dtype=int))
    assert r.accuracy == 1.0
    assert r.adjacent_error_fraction == 0.0 and r.non_adjacent_errors == 0


def test_error_categories():
    y_true = np.array([1, 2, 3, 5, 0, 1, 4])
    y_pred = np.array([2, 1, 5, 1, 3, 0, 4])
    r = report_from_predictions(y_true, y_pred)
    assert r.n_errors == 6
    assert r.adjacent_errors == 2  # 1->2, 2->1
    assert r.non_adjacent_errors == 2  # 3->5, 5->1
    assert r.interference_errors == 2  # 0->3, 1->0
    assert r.adjacent_error_fraction == pytest.approx(2 / 6)
    assert r.confusion.sum(axis=1).tolist() == np.bincount(y_true, minlength=6).tolist()
    assert r.accuracy == pytest.approx(np.trace(r.confusion) / r.total)


def test_summary_and_csv():
    r = report_from_predictions([0, 1, 2], [0, 1, 1])
    line = r.summary_line()
    assert line.startswith("accuracy=0.6667, adjacent_err=1.0000, interference_recall=1.0000")
    rows = r.confusion_csv().splitlines()
    assert len(rows) == 7 and rows[0].startswith("true\\pred")


def test_empty_test_set():
    with pytest.raises(ValueError):
        report_from_predictions([], [])


def test_export_features(small_model, small_bundle):
    X, y, ids = small_bundle.arrays("test")
    text = export_features(small_model, X[:5], y[:5], ["tea"] * 5, ids[:5])
    lines = text.splitlines()
    assert len(lines) == 6
    assert len(lines[0].split(",")) == 64 + 3
    dup = export_features(small_model, np.stack([X[0], X[0]]))
    a, b = dup.splitlines()[1:]
    assert a == b
