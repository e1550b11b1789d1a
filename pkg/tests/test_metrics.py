"""Unit tests for confusion-matrix metrics."""
import os
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)


def oracle_scores(pred, truth, num_classes):
    """Per-class (iou, acc, f1) from explicit pixel sets; None where undefined or the class is absent."""
    scores = []
    for c in range(num_classes):
        p = {i for i, v in enumerate(pred) if v == c}
        t = {i for i, v in enumerate(truth) if v == c}
        if not p and not t:
            scores.append(None)
            continue
        inter = len(p & t)
        iou = inter / len(p | t)
        acc = inter / len(t) if t else None
        f1 = 2 * inter / (len(p) + len(t))
        scores.append((iou, acc, f1))
    return scores


def test_worked_example_exact():
    from src.pipeline.metrics import ConfusionMatrix, mean_accuracy, mean_f1, mean_iou
    cm = ConfusionMatrix(np.array([[2, 1], [0, 1]]))
    assert Fraction(mean_iou(cm)).limit_denominator(1000) == Fraction(7, 12)
    assert Fraction(mean_accuracy(cm)).limit_denominator(1000) == Fraction(5, 6)
    assert Fraction(mean_f1(cm)).limit_denominator(1000) == Fraction(11, 15)


def test_count_pairs_orientation():
    from src.pipeline.metrics import count_pairs
    truth = np.array([0, 0, 1])
    pred = np.array([0, 1, 1])
    cm = count_pairs(pred, truth, 2)
    np.testing.assert_array_equal(cm, [[1, 1], [0, 1]])


@pytest.mark.parametrize("seed", range(20))
def test_metrics_match_set_oracle(seed):
    from src.pipeline.metrics import (
        ConfusionMatrix, accuracy_per_class, count_pairs, f1_per_class, iou_per_class,
        mean_accuracy, mean_f1, mean_iou,
    )
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 6))
    n = int(rng.integers(5, 60))
    truth = rng.integers(0, c, size=n)
    pred = np.where(rng.random(n) < 0.6, truth, rng.integers(0, c, size=n))
    cm = ConfusionMatrix(count_pairs(pred, truth, c))
    scores = oracle_scores(pred.tolist(), truth.tolist(), c)
    iou, acc, f1 = iou_per_class(cm), accuracy_per_class(cm), f1_per_class(cm)
    for k, s in enumerate(scores):
        if s is None:
            assert np.isnan(iou[k])
            continue
        assert iou[k] == pytest.approx(s[0], abs=1e-12)
        assert f1[k] == pytest.approx(s[2], abs=1e-12)
        if s[1] is None:
            assert np.isnan(acc[k])
        else:
            assert acc[k] == pytest.approx(s[1], abs=1e-12)
    present = [s for s in scores if s is not None]
    assert mean_iou(cm) == pytest.approx(np.mean([s[0] for s in present]), abs=1e-12)
    assert mean_f1(cm) == pytest.approx(np.mean([s[2] for s in present]), abs=1e-12)
    accs = [s[1] for s in present if s[1] is not None]
    assert mean_accuracy(cm) == pytest.approx(np.mean(accs), abs=1e-12)


def test_absent_class_excluded_from_means():
    from src.pipeline.metrics import ConfusionMatrix, mean_iou, present_classes
    cm = ConfusionMatrix(np.array([[3, 0, 0], [0, 0, 0], [0, 0, 2]]))
    np.testing.assert_array_equal(present_classes(cm), [True, False, True])
    assert mean_iou(cm) == 1.0


def test_empty_matrix_is_undefined():
    from src.pipeline.metrics import ConfusionMatrix, mean_iou, pixel_accuracy
    from src.utils.errors import UndefinedMetricError
    cm = ConfusionMatrix.empty(3)
    with pytest.raises(UndefinedMetricError):
        mean_iou(cm)
    with pytest.raises(UndefinedMetricError):
        pixel_accuracy(cm)


def test_accumulate_returns_new_matrix():
    from src.pipeline.metrics import ConfusionMatrix, accumulate
    from src.pipeline.samples import MaskImage
    cm = ConfusionMatrix.empty(6)
    mask = MaskImage(np.array([[0, 1], [4, 4]]))
    out = accumulate(cm, mask, mask)
    assert cm.total == 0
    assert out.total == 4
    assert out.counts[4, 4] == 2


def test_accumulate_shape_mismatch():
    from src.pipeline.metrics import ConfusionMatrix, accumulate
    from src.pipeline.samples import MaskImage
    from src.utils.errors import DimensionError
    with pytest.raises(DimensionError):
        accumulate(ConfusionMatrix.empty(6), MaskImage(np.zeros((2, 2))), MaskImage(np.zeros((2, 3))))


def test_count_pairs_rejects_out_of_range():
    from src.pipeline.metrics import count_pairs
    from src.utils.errors import MaskValidationError
    with pytest.raises(MaskValidationError):
        count_pairs(np.array([0, 3]), np.array([0, 1]), 3)


def test_merge_is_entrywise_sum():
    from src.pipeline.metrics import ConfusionMatrix, merge
    a = ConfusionMatrix(np.array([[1, 0], [2, 3]]))
    b = ConfusionMatrix(np.array([[0, 4], [1, 1]]))
    np.testing.assert_array_equal(merge([a, b]).counts, [[1, 4], [3, 4]])


def test_merge_rejects_mixed_sizes():
    from src.pipeline.metrics import ConfusionMatrix, merge
    from src.utils.errors import DimensionError
    with pytest.raises(DimensionError):
        merge([ConfusionMatrix.empty(2), ConfusionMatrix.empty(3)])


def test_metrics_frame_rows():
    from src.pipeline.metrics import ConfusionMatrix, metrics_frame
    cm = ConfusionMatrix(np.array([[2, 1], [0, 1]]))
    frame = metrics_frame(cm, ["a", "b"])
    assert frame["class"].tolist() == ["a", "b", "mean", "pixel_accuracy"]
    assert frame.loc[frame["class"] == "pixel_accuracy", "accuracy"].iloc[0] == pytest.approx(0.75)
    assert frame.loc[frame["class"] == "a", "iou"].iloc[0] == pytest.approx(2 / 3)


def test_metrics_ignore_pixel_order():
    from src.pipeline.metrics import ConfusionMatrix, count_pairs, mean_f1, mean_iou, pixel_accuracy
    rng = np.random.default_rng(11)
    truth = rng.integers(0, 6, size=(12, 18))
    pred = np.where(rng.random((12, 18)) < 0.7, truth, rng.integers(0, 6, size=(12, 18)))
    order = rng.permutation(truth.size)
    a = ConfusionMatrix(count_pairs(pred, truth, 6))
    b = ConfusionMatrix(count_pairs(pred.reshape(-1)[order], truth.reshape(-1)[order], 6))
    np.testing.assert_array_equal(a.counts, b.counts)
    assert (mean_iou(a), mean_f1(a), pixel_accuracy(a)) == (mean_iou(b), mean_f1(b), pixel_accuracy(b))


def test_metrics_of_tiles_merge_to_whole_image():
    from src.pipeline.metrics import ConfusionMatrix, accumulate, mean_iou, merge
    from src.pipeline.samples import MaskImage
    from src.pipeline.transform import tile_crops
    rng = np.random.default_rng(12)
    truth = rng.integers(0, 6, size=(8, 16)).astype(np.uint8)
    pred = np.where(rng.random((8, 16)) < 0.5, truth, rng.integers(0, 6, size=(8, 16))).astype(np.uint8)
    whole = accumulate(ConfusionMatrix.empty(6), MaskImage(pred), MaskImage(truth))
    tiles = [
        accumulate(ConfusionMatrix.empty(6), MaskImage(p), MaskImage(t))
        for p, t in zip(tile_crops(pred, 2, 4, 4), tile_crops(truth, 2, 4, 4))
    ]
    merged = merge(tiles)
    np.testing.assert_array_equal(merged.counts, whole.counts)
    assert mean_iou(merged) == mean_iou(whole)
