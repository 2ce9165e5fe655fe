"""Tests for the segmentation metrics.

Accumulation is checked against a nested-loop pixel count, the IoU family
against hand-derived closed forms on small matrices, and the reductions
against direct formula evaluation on random matrices.
"""

from __future__ import annotations

import numpy as np
import pytest

from occlugen.errors import InputError
from occlugen.metrics import (
    ConfusionMatrix,
    accumulate,
    fw_iou,
    iou_per_class,
    mean_iou,
    pixel_accuracy,
    weighted_iou,
)

# a realistic two-class face/background matrix whose per-class IoUs come
# out to exactly 0.9504 and 0.8399 (unions 1,000,625 and 310,000)
REFERENCE_COUNTS = np.array([[950_994, 24_816], [24_815, 260_369]])


def _loop_confusion(pred, gt, k):
    counts = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(pred.ravel(), gt.ravel()):
        counts[g, p] += 1
    return counts


class TestConfusionMatrix:
    def test_zeros_builds_an_empty_square(self):
        cm = ConfusionMatrix.zeros(3)
        assert cm.num_classes == 3
        assert cm.counts.dtype == np.int64
        assert not cm.counts.any()

    def test_rejects_non_square(self):
        with pytest.raises(InputError, match="must be square"):
            ConfusionMatrix(np.zeros((2, 3), dtype=np.int64))
        with pytest.raises(InputError, match="must be square"):
            ConfusionMatrix(np.zeros(4, dtype=np.int64))

    def test_rejects_negative_counts(self):
        with pytest.raises(InputError, match="must be non-negative"):
            ConfusionMatrix(np.array([[1, -1], [0, 2]]))

    def test_rejects_fewer_than_two_classes(self):
        with pytest.raises(InputError, match="at least 2 classes"):
            ConfusionMatrix.zeros(1)

    def test_merge_adds_counts(self):
        a = ConfusionMatrix(np.array([[1, 2], [3, 4]]))
        b = ConfusionMatrix(np.array([[10, 0], [0, 10]]))
        assert np.array_equal(a.merged(b).counts, [[11, 2], [3, 14]])

    def test_merge_rejects_size_mismatch(self):
        with pytest.raises(InputError, match="different sizes"):
            ConfusionMatrix.zeros(2).merged(ConfusionMatrix.zeros(3))


class TestAccumulate:
    def test_all_agree_lands_on_the_diagonal(self):
        cm = ConfusionMatrix.zeros(2)
        ones = np.ones((4, 4), dtype=np.uint8)
        accumulate(cm, ones, ones)
        assert np.array_equal(cm.counts, [[0, 0], [0, 16]])

    def test_all_disagree_lands_off_diagonal(self):
        cm = ConfusionMatrix.zeros(2)
        accumulate(cm, np.ones((4, 4), dtype=np.uint8), np.zeros((4, 4), dtype=np.uint8))
        assert np.array_equal(cm.counts, [[0, 16], [0, 0]])

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(3)
        cm = ConfusionMatrix.zeros(4)
        expected = np.zeros((4, 4), dtype=np.int64)
        for _ in range(20):
            pred = rng.integers(0, 4, size=(8, 8), dtype=np.int64)
            gt = rng.integers(0, 4, size=(8, 8), dtype=np.int64)
            accumulate(cm, pred, gt)
            expected += _loop_confusion(pred, gt, 4)
        assert np.array_equal(cm.counts, expected)

    def test_accumulation_order_does_not_matter(self):
        rng = np.random.default_rng(4)
        pairs = [
            (rng.integers(0, 2, size=(6, 6)), rng.integers(0, 2, size=(6, 6)))
            for _ in range(5)
        ]
        forward = ConfusionMatrix.zeros(2)
        backward = ConfusionMatrix.zeros(2)
        for pred, gt in pairs:
            accumulate(forward, pred, gt)
        for pred, gt in reversed(pairs):
            accumulate(backward, pred, gt)
        assert np.array_equal(forward.counts, backward.counts)

    def test_merged_equals_single_pass(self):
        rng = np.random.default_rng(5)
        pairs = [
            (rng.integers(0, 3, size=(7, 5)), rng.integers(0, 3, size=(7, 5)))
            for _ in range(6)
        ]
        whole = ConfusionMatrix.zeros(3)
        for pred, gt in pairs:
            accumulate(whole, pred, gt)
        left, right = ConfusionMatrix.zeros(3), ConfusionMatrix.zeros(3)
        for pred, gt in pairs[:3]:
            accumulate(left, pred, gt)
        for pred, gt in pairs[3:]:
            accumulate(right, pred, gt)
        assert np.array_equal(left.merged(right).counts, whole.counts)

    def test_out_of_range_label_names_the_offender(self):
        cm = ConfusionMatrix.zeros(2)
        bad = np.full((2, 2), 5, dtype=np.int64)
        with pytest.raises(InputError, match=r"pred holds label 5 outside \[0, 1\]"):
            accumulate(cm, bad, np.zeros((2, 2), dtype=np.int64))
        with pytest.raises(InputError, match=r"gt holds label -1 outside \[0, 1\]"):
            accumulate(cm, np.zeros((2, 2), dtype=np.int64), np.full((2, 2), -1))

    def test_float_labels_are_rejected(self):
        cm = ConfusionMatrix.zeros(2)
        with pytest.raises(InputError, match="must be integer arrays"):
            accumulate(cm, np.zeros((2, 2)), np.zeros((2, 2), dtype=np.int64))

    def test_shape_mismatch_is_rejected(self):
        cm = ConfusionMatrix.zeros(2)
        with pytest.raises(InputError, match="does not match gt shape"):
            accumulate(cm, np.zeros((2, 3), dtype=np.int64), np.zeros((3, 2), dtype=np.int64))


class TestIouPerClass:
    def test_perfect_prediction_scores_one(self):
        cm = ConfusionMatrix(np.diag([10, 20, 30]))
        assert np.allclose(iou_per_class(cm), [1.0, 1.0, 1.0])

    def test_total_confusion_scores_zero(self):
        cm = ConfusionMatrix(np.array([[0, 7], [9, 0]]))
        assert np.allclose(iou_per_class(cm), [0.0, 0.0])

    def test_reference_matrix(self):
        ious = iou_per_class(ConfusionMatrix(REFERENCE_COUNTS))
        assert ious[0] == pytest.approx(0.9504, abs=5e-5)
        assert ious[1] == pytest.approx(0.8399, abs=5e-5)

    def test_absent_class_is_nan_not_zero(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[0, 0] = 5
        counts[1, 1] = 5
        ious = iou_per_class(ConfusionMatrix(counts))
        assert ious[0] == 1.0 and ious[1] == 1.0
        assert np.isnan(ious[2])

    def test_hand_counted_union(self):
        # class 0: tp=3, fp=2 (column), fn=1 (row) -> 3 / 6
        cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]))
        assert iou_per_class(cm)[0] == pytest.approx(3 / 6)
        assert iou_per_class(cm)[1] == pytest.approx(4 / 7)


class TestMeanIou:
    def test_reference_matrix(self):
        assert mean_iou(ConfusionMatrix(REFERENCE_COUNTS)) == pytest.approx(0.89515, abs=5e-5)

    def test_nan_classes_drop_out_of_the_mean(self):
        counts = np.zeros((3, 3), dtype=np.int64)
        counts[0, 0] = 8
        counts[0, 1] = 2  # class 1 defined through false positives
        assert mean_iou(ConfusionMatrix(counts)) == pytest.approx((0.8 + 0.0) / 2)

    def test_matches_direct_formula_on_random_matrices(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            counts = rng.integers(0, 1000, size=(3, 3))
            cm = ConfusionMatrix(counts)
            tp = np.diag(counts).astype(float)
            union = counts.sum(0) + counts.sum(1) - np.diag(counts)
            expected = np.mean(tp[union > 0] / union[union > 0])
            assert mean_iou(cm) == pytest.approx(expected, abs=1e-12)

    def test_empty_matrix_is_an_error(self):
        with pytest.raises(InputError, match="mean IoU does not exist"):
            mean_iou(ConfusionMatrix.zeros(2))


class TestWeightedIou:
    def test_balanced_weights_reduce_to_the_mean(self):
        ious = iou_per_class(ConfusionMatrix(REFERENCE_COUNTS))
        assert weighted_iou([0.5, 0.5], ious) == pytest.approx(
            mean_iou(ConfusionMatrix(REFERENCE_COUNTS))
        )

    def test_background_heavy_weighting(self):
        assert weighted_iou([0.9, 0.1], [0.9504, 0.8399]) == pytest.approx(0.93935)

    def test_nan_entries_renormalize_the_weight(self):
        # only the first class is defined, so its weight becomes the whole
        assert weighted_iou([0.25, 0.75], [0.6, np.nan]) == pytest.approx(0.6)
        assert weighted_iou([0.2, 0.3, 0.5], [0.4, np.nan, 0.8]) == pytest.approx(
            (0.2 * 0.4 + 0.5 * 0.8) / 0.7
        )

    def test_shape_mismatch_is_rejected(self):
        with pytest.raises(InputError, match="does not match"):
            weighted_iou([0.5, 0.5], [1.0])

    def test_no_defined_weight_is_an_error(self):
        with pytest.raises(InputError, match="no class with positive weight"):
            weighted_iou([0.0, 1.0], [0.5, np.nan])


class TestFwIou:
    def test_perfect_prediction_scores_one(self):
        assert fw_iou(ConfusionMatrix(np.diag([100, 1]))) == pytest.approx(1.0)

    def test_matches_share_weighted_reduction(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            counts = rng.integers(0, 500, size=(3, 3))
            counts[0, 0] += 1  # keep the matrix non-empty
            cm = ConfusionMatrix(counts)
            shares = counts.sum(axis=1) / counts.sum()
            assert fw_iou(cm) == pytest.approx(
                weighted_iou(shares, iou_per_class(cm)), abs=1e-12
            )

    def test_balanced_shares_equal_the_mean(self):
        # equal ground-truth mass per class makes fw-IoU collapse to mIoU
        counts = np.array([[80, 20], [30, 70]])
        cm = ConfusionMatrix(counts)
        assert fw_iou(cm) == pytest.approx(mean_iou(cm))

    def test_empty_matrix_is_an_error(self):
        with pytest.raises(InputError, match="confusion matrix is empty"):
            fw_iou(ConfusionMatrix.zeros(2))


class TestPixelAccuracy:
    def test_trace_over_total(self):
        cm = ConfusionMatrix(np.array([[6, 2], [1, 11]]))
        assert pixel_accuracy(cm) == pytest.approx(17 / 20)

    def test_reference_matrix(self):
        total = REFERENCE_COUNTS.sum()
        expected = (950_994 + 260_369) / total
        assert pixel_accuracy(ConfusionMatrix(REFERENCE_COUNTS)) == pytest.approx(expected)

    def test_empty_matrix_is_an_error(self):
        with pytest.raises(InputError, match="confusion matrix is empty"):
            pixel_accuracy(ConfusionMatrix.zeros(2))


class TestBounds:
    def test_every_metric_stays_in_unit_interval(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            counts = rng.integers(0, 1000, size=(2, 2))
            counts[0, 0] += 1
            cm = ConfusionMatrix(counts)
            ious = iou_per_class(cm)
            defined = ious[~np.isnan(ious)]
            assert ((0.0 <= defined) & (defined <= 1.0)).all()
            assert 0.0 <= mean_iou(cm) <= 1.0
            assert 0.0 <= fw_iou(cm) <= 1.0
            assert 0.0 <= pixel_accuracy(cm) <= 1.0
