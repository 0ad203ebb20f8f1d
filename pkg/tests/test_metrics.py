import math

import numpy as np
import pytest

from confseg.labels import NUM_CHANNELS, ConfidenceMap, compute_weights, threshold_map
from confseg.metrics import (
    EPS,
    UndefinedMetricError,
    classification_scores,
    clamp_probs,
    iou,
    rmse,
    soft_ce,
    trimap_loss,
    weighted_ce,
)


def stack(plane, fill=0):
    arr = np.full((NUM_CHANNELS, len(plane), len(plane[0])), fill, dtype=np.float64)
    arr[0] = plane
    return arr


# ---------------------------------------------------------------------------
# Brute-force per-pixel oracles, deliberately written as plain loops so they
# share no code with the vectorized implementations.

def oracle_weighted_ce(pred, gt, w):
    total, count = 0.0, 0
    for c in range(pred.shape[0]):
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                p = min(max(pred[c, y, x], EPS), 1 - EPS)
                t = gt[c, y, x]
                total += -w[c, y, x] * (t * math.log(p) + (1 - t) * math.log(1 - p))
                count += 1
    return total / count


def oracle_soft_ce(pred, cmap_values):
    total, count = 0.0, 0
    for c in range(pred.shape[0]):
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                p = min(max(pred[c, y, x], EPS), 1 - EPS)
                t = cmap_values[c, y, x] / 100.0
                total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
                count += 1
    return total / count


def oracle_trimap(pred, cmap_values):
    total, count = 0.0, 0
    for c in range(pred.shape[0]):
        for y in range(pred.shape[1]):
            for x in range(pred.shape[2]):
                v = cmap_values[c, y, x]
                if v not in (0, 100):
                    continue
                p = min(max(pred[c, y, x], EPS), 1 - EPS)
                t = v / 100.0
                total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
                count += 1
    if count == 0:
        return None
    return total / count


class TestIoU:
    def test_identity_is_one(self):
        m = stack([[1, 0], [1, 1]])
        assert iou(m, m)["macro"] == 1.0

    def test_disjoint_is_zero(self):
        a = stack([[1, 0], [0, 0]])
        b = stack([[0, 1], [0, 0]])
        assert iou(a, b)["per_channel"][0] == 0.0

    def test_one_third(self):
        pred = stack([[1, 1], [0, 0]])
        gt = stack([[1, 0], [1, 0]])
        assert iou(pred, gt)["per_channel"][0] == pytest.approx(1 / 3)

    def test_empty_union_channels_excluded(self):
        pred = stack([[1, 1], [0, 0]])
        gt = stack([[1, 1], [0, 0]])
        scores = iou(pred, gt)
        assert scores["macro"] == 1.0
        assert np.isnan(scores["per_channel"][1])

    def test_all_empty_macro_is_one(self):
        z = np.zeros((NUM_CHANNELS, 2, 2))
        assert iou(z, z)["macro"] == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 2, (NUM_CHANNELS, 5, 5))
        b = rng.integers(0, 2, (NUM_CHANNELS, 5, 5))
        assert iou(a, b)["macro"] == iou(b, a)["macro"]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2, (NUM_CHANNELS, 4, 4))
        b = rng.integers(0, 2, (NUM_CHANNELS, 4, 4))
        perm = rng.permutation(16)
        ap = a.reshape(NUM_CHANNELS, -1)[:, perm].reshape(a.shape)
        bp = b.reshape(NUM_CHANNELS, -1)[:, perm].reshape(b.shape)
        assert iou(ap, bp)["macro"] == pytest.approx(iou(a, b)["macro"])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            iou(np.zeros((NUM_CHANNELS, 2, 2)), np.zeros((NUM_CHANNELS, 3, 2)))


class TestWeightedCE:
    def test_analytic_ln2(self):
        pred = stack([[0.5]], fill=0.5)
        gt = stack([[1]])
        w = np.ones_like(pred)
        assert weighted_ce(pred, gt, w) == pytest.approx(math.log(2))

    def test_background_case(self):
        pred = np.full((NUM_CHANNELS, 1, 1), 0.1)
        gt = np.zeros_like(pred)
        w = np.full_like(pred, 0.8)
        assert weighted_ce(pred, gt, w) == pytest.approx(-0.8 * math.log(0.9))
        assert weighted_ce(pred, gt, w) == pytest.approx(0.0843, abs=2e-5)

    def test_perfect_prediction_is_near_zero(self):
        gt = stack([[1, 0], [0, 1]])
        pred = gt.astype(np.float64)
        w = np.full_like(pred, 0.37)
        assert weighted_ce(pred, gt, w) < 1e-6

    def test_unit_weights_match_plain_bce(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0.01, 0.99, (NUM_CHANNELS, 6, 6))
        gt = rng.integers(0, 2, pred.shape)
        w = np.ones_like(pred)
        plain = -(gt * np.log(pred) + (1 - gt) * np.log(1 - pred)).mean()
        assert abs(weighted_ce(pred, gt, w) - plain) < 1e-12

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            pred = rng.uniform(0, 1, (NUM_CHANNELS, 8, 8))
            gt = rng.integers(0, 2, pred.shape).astype(np.float64)
            w = rng.uniform(0.1, 1.0, pred.shape)
            assert weighted_ce(pred, gt, w) == pytest.approx(
                oracle_weighted_ce(pred, gt, w), abs=1e-10)


class TestSoftCE:
    def test_half_half(self):
        cmap = ConfidenceMap(np.full((NUM_CHANNELS, 1, 1), 50, dtype=np.uint8))
        pred = np.full((NUM_CHANNELS, 1, 1), 0.5)
        assert soft_ce(pred, cmap) == pytest.approx(math.log(2))

    def test_limit_at_clamp(self):
        cmap = ConfidenceMap(np.full((NUM_CHANNELS, 1, 1), 100, dtype=np.uint8))
        pred = np.ones((NUM_CHANNELS, 1, 1))
        assert soft_ce(pred, cmap) == pytest.approx(0.0, abs=1e-6)

    def test_binary_entropy_is_the_minimum(self):
        # At c = 0.6 the loss is minimized at p = 0.6 with value H(0.6);
        # verified against a numeric grid search.
        cmap = ConfidenceMap(np.full((NUM_CHANNELS, 1, 1), 60, dtype=np.uint8))
        grid = np.linspace(0.01, 0.99, 981)
        losses = [
            soft_ce(np.full((NUM_CHANNELS, 1, 1), p), cmap) for p in grid
        ]
        best = grid[int(np.argmin(losses))]
        assert best == pytest.approx(0.6, abs=0.005)
        at_c = soft_ce(np.full((NUM_CHANNELS, 1, 1), 0.6), cmap)
        assert at_c == pytest.approx(0.6730, abs=1e-4)
        assert min(losses) == pytest.approx(at_c, abs=1e-6)

    def test_minimized_at_mean_target_for_constant_pred(self):
        rng = np.random.default_rng(4)
        cmap = ConfidenceMap(rng.integers(0, 101, (NUM_CHANNELS, 4, 4)).astype(np.uint8))
        mean_c = cmap.values.mean() / 100.0
        grid = np.linspace(0.02, 0.98, 481)
        losses = [soft_ce(np.full((NUM_CHANNELS, 4, 4), p), cmap) for p in grid]
        assert grid[int(np.argmin(losses))] == pytest.approx(mean_c, abs=0.005)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            pred = rng.uniform(0, 1, (NUM_CHANNELS, 8, 8))
            cmap = ConfidenceMap(rng.integers(0, 101, pred.shape).astype(np.uint8))
            assert soft_ce(pred, cmap) == pytest.approx(
                oracle_soft_ce(pred, cmap.values), abs=1e-10)


class TestTrimapLoss:
    def test_all_certain_equals_soft_ce(self):
        rng = np.random.default_rng(6)
        values = rng.choice([0, 100], (NUM_CHANNELS, 5, 5)).astype(np.uint8)
        cmap = ConfidenceMap(values)
        pred = rng.uniform(0, 1, values.shape)
        assert trimap_loss(pred, cmap) == soft_ce(pred, cmap)

    def test_undefined_on_no_certain_pixels(self):
        cmap = ConfidenceMap(np.full((NUM_CHANNELS, 2, 2), 50, dtype=np.uint8))
        with pytest.raises(UndefinedMetricError):
            trimap_loss(np.full((NUM_CHANNELS, 2, 2), 0.5), cmap)

    def test_two_pixel_hand_case(self):
        values = np.full((NUM_CHANNELS, 1, 3), 50, dtype=np.uint8)
        values[0] = [[0, 50, 100]]
        cmap = ConfidenceMap(values)
        pred = np.full((NUM_CHANNELS, 1, 3), 0.5)
        pred[0] = [[0.1, 0.9, 0.8]]
        expected = (-math.log(0.9) - math.log(0.8)) / 2
        assert trimap_loss(pred, cmap) == pytest.approx(expected)
        assert expected == pytest.approx(0.1643, abs=1e-4)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            pred = rng.uniform(0, 1, (NUM_CHANNELS, 8, 8))
            values = rng.choice(
                [0, 20, 40, 50, 60, 80, 100], (NUM_CHANNELS, 8, 8)
            ).astype(np.uint8)
            cmap = ConfidenceMap(values)
            expected = oracle_trimap(pred, values)
            assert expected is not None
            assert trimap_loss(pred, cmap) == pytest.approx(expected, abs=1e-10)


class TestRmse:
    def test_zero_on_equal(self):
        assert rmse([0.1, 0.4], [0.1, 0.4]) == 0.0

    def test_sqrt_half(self):
        assert rmse([0, 1], [1, 1]) == pytest.approx(math.sqrt(0.5))

    def test_single_pair(self):
        assert rmse([0.3], [0.8]) == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rmse([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])


class TestClassificationScores:
    def test_perfect(self):
        s = classification_scores([1, 0, 1], [1, 0, 1], positive_class=1)
        assert s == {"accuracy": 1.0, "recall": 1.0, "precision": 1.0}

    def test_confusion_counts(self):
        s = classification_scores([1, 0, 0, 0], [1, 1, 0, 0], positive_class=1)
        assert s["accuracy"] == 0.75
        assert s["recall"] == 0.5
        assert s["precision"] == 1.0

    def test_no_predicted_positives_gives_undefined_precision(self):
        s = classification_scores([0, 0], [1, 0], positive_class=1)
        assert s["recall"] == 0.0
        assert s["precision"] is None

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classification_scores([], [], positive_class=1)


class TestClamping:
    def test_clamp_bounds(self):
        arr = np.array([0.0, 0.5, 1.0])
        clamped = clamp_probs(arr)
        assert clamped[0] == EPS
        assert clamped[2] == 1.0 - EPS
        assert clamped[1] == 0.5


class TestSegReportRow:
    def test_evaluate_seg_keys_and_trimap_nan(self):
        from confseg.metrics import evaluate_seg

        cmap = ConfidenceMap(np.full((NUM_CHANNELS, 3, 3), 50, dtype=np.uint8))
        pred = np.full((NUM_CHANNELS, 3, 3), 0.4)
        row = evaluate_seg(pred, cmap, 50)
        assert set(row) == {"iou", "iou_per_channel", "weighted_ce", "soft_ce",
                            "trimap_loss"}
        assert math.isnan(row["trimap_loss"])
