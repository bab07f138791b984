import numpy as np
import pytest

from cnlgnn.errors import DataError
from cnlgnn.metrics import compute_metrics, majority_class_report


def test_all_correct_gives_unit_scores():
    y = np.array([0, 1, 2, 1, 0])
    rep = compute_metrics(y, y, 3)
    assert rep.macro_f1 == 1.0
    assert rep.accuracy == 1.0
    assert np.array_equal(np.diag(rep.confusion), [2, 2, 1])


def test_hand_computed_two_class_case():
    # confusion [[5, 0], [5, 0]]: everything predicted class 0
    y_true = np.array([0] * 5 + [1] * 5)
    y_pred = np.zeros(10, dtype=np.int64)
    rep = compute_metrics(y_true, y_pred, 2)
    assert np.array_equal(rep.confusion, [[5, 0], [5, 0]])
    assert rep.per_class_precision[0] == 0.5
    assert rep.per_class_recall[0] == 1.0
    assert abs(rep.per_class_f1[0] - 2 / 3) < 1e-12
    assert rep.per_class_precision[1] == 0.0
    assert rep.per_class_f1[1] == 0.0
    assert abs(rep.macro_f1 - 1 / 3) < 1e-12
    assert rep.accuracy == 0.5


def test_single_class_predictions_on_balanced_data():
    y_true = np.array([0, 1] * 10)
    rep = compute_metrics(y_true, np.zeros(20, dtype=np.int64), 2)
    assert rep.accuracy == 0.5


def test_macro_ignores_absent_classes():
    # class 2 never appears in ground truth; macro averages classes 0 and 1 only
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 2, 1, 1])
    rep = compute_metrics(y_true, y_pred, 3)
    f1_0 = 2 * (1.0 * 0.5) / 1.5
    assert abs(rep.macro_f1 - (f1_0 + 1.0) / 2) < 1e-12


def test_micro_equals_accuracy():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 4, 50)
    y_pred = rng.integers(0, 4, 50)
    rep = compute_metrics(y_true, y_pred, 4)
    assert rep.micro_f1 == rep.accuracy
    assert rep.primary_f1("micro") == rep.accuracy
    assert rep.primary_f1("macro") == rep.macro_f1
    with pytest.raises(DataError):
        rep.primary_f1("weighted")


def test_majority_baseline():
    y = np.array([1, 1, 1, 0, 2])
    rep = majority_class_report(y, 3)
    assert rep.accuracy == 3 / 5


def test_empty_and_mismatched_inputs_rejected():
    with pytest.raises(DataError):
        compute_metrics(np.array([]), np.array([]), 2)
    with pytest.raises(DataError):
        compute_metrics(np.array([0, 1]), np.array([0]), 2)
