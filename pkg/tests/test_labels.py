import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confseg.labels import (
    BACKGROUND_WEIGHT_EDGE,
    NUM_CHANNELS,
    THRESHOLD_LEVELS,
    ConfidenceMap,
    as_threshold,
    compute_weights,
    foreground_fraction,
    threshold_map,
    trimap_select,
)


def plane_map(plane):
    """Confidence map with one given plane, the rest zero."""
    arr = np.zeros((NUM_CHANNELS, len(plane), len(plane[0])), dtype=np.uint8)
    arr[0] = plane
    return ConfidenceMap(arr)


conf_maps = arrays(
    np.uint8, (NUM_CHANNELS, 4, 5), elements=st.integers(0, 100)
).map(ConfidenceMap)


class TestConfidenceMap:
    def test_rejects_out_of_range(self):
        arr = np.zeros((NUM_CHANNELS, 2, 2), dtype=np.int32)
        arr[0, 0, 0] = 101
        with pytest.raises(ValueError, match=r"\[0, 100\]"):
            ConfidenceMap(arr)

    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ValueError, match="6, H, W"):
            ConfidenceMap(np.zeros((5, 2, 2), dtype=np.uint8))

    def test_rejects_empty_raster(self):
        with pytest.raises(ValueError):
            ConfidenceMap(np.zeros((NUM_CHANNELS, 0, 3), dtype=np.uint8))

    def test_equality_is_by_value(self):
        a = plane_map([[0, 50], [100, 20]])
        b = plane_map([[0, 50], [100, 20]])
        assert a == b


class TestThresholdMap:
    def test_mid_threshold(self):
        cm = plane_map([[0, 30], [60, 100]])
        assert threshold_map(cm, 50)[0].tolist() == [[0, 0], [1, 1]]

    def test_zero_keeps_strict_support(self):
        cm = plane_map([[0, 30], [60, 100]])
        assert threshold_map(cm, 0)[0].tolist() == [[0, 1], [1, 1]]

    def test_hundred_keeps_only_certain(self):
        cm = plane_map([[0, 30], [60, 100]])
        assert threshold_map(cm, 100)[0].tolist() == [[0, 0], [0, 1]]

    def test_rejects_off_grid_threshold(self):
        with pytest.raises(ValueError, match="not in the fixed set"):
            as_threshold(37)

    @settings(max_examples=200, deadline=None)
    @given(conf_maps)
    def test_monotone_in_threshold(self, cmap):
        masks = [threshold_map(cmap, t) for t in THRESHOLD_LEVELS]
        for lower, higher in zip(masks, masks[1:]):
            assert np.all(higher <= lower)

    @settings(max_examples=100, deadline=None)
    @given(conf_maps)
    def test_zero_equals_support(self, cmap):
        assert np.array_equal(threshold_map(cmap, 0), cmap.values > 0)


class TestComputeWeights:
    def test_mid_threshold_uses_level_for_background(self):
        cm = plane_map([[0, 60]])
        mask = threshold_map(cm, 60)
        w = compute_weights(cm, 60, mask)
        assert w[0].tolist() == [[0.6, 0.6]]

    def test_edge_threshold_100_uses_point_eight(self):
        cm = plane_map([[0, 100]])
        mask = threshold_map(cm, 100)
        w = compute_weights(cm, 100, mask)
        assert w[0].tolist() == [[BACKGROUND_WEIGHT_EDGE, 1.0]]

    def test_edge_threshold_0_uses_point_eight(self):
        cm = plane_map([[0, 40]])
        mask = threshold_map(cm, 0)
        w = compute_weights(cm, 0, mask)
        assert w[0].tolist() == [[BACKGROUND_WEIGHT_EDGE, 0.4]]

    @pytest.mark.parametrize("t", [20, 40, 50, 60, 80])
    def test_background_weight_is_exactly_t_over_100(self, t):
        cm = plane_map([[0, 100], [t, 100]])
        mask = threshold_map(cm, t)
        w = compute_weights(cm, t, mask)
        assert w[0, 0, 0] == t / 100

    @settings(max_examples=100, deadline=None)
    @given(conf_maps, st.sampled_from(THRESHOLD_LEVELS))
    def test_weights_always_positive_and_at_most_one(self, cmap, t):
        w = compute_weights(cmap, t, threshold_map(cmap, t))
        assert np.all(w > 0)
        assert np.all(w <= 1.0)

    def test_shape_mismatch_rejected(self):
        cm = plane_map([[0, 60]])
        with pytest.raises(ValueError, match="mask shape"):
            compute_weights(cm, 60, np.zeros((NUM_CHANNELS, 3, 3)))


class TestTrimapSelect:
    def test_mixed_values(self):
        cm = plane_map([[0, 50, 100]])
        tri = trimap_select(cm)
        assert tri.certain[0].tolist() == [[True, False, True]]
        assert tri.targets[0, 0, 0] == 0.0
        assert tri.targets[0, 0, 2] == 1.0

    def test_all_zero_map_is_fully_certain(self):
        cm = ConfidenceMap.zeros(3, 2)
        tri = trimap_select(cm)
        assert tri.count == NUM_CHANNELS * 6
        assert np.all(tri.targets == 0.0)

    def test_no_certain_pixels(self):
        cm = plane_map([[50, 60]])
        cm.values[1:] = 30  # kill the all-zero channels too
        tri = trimap_select(cm)
        assert tri.count == 0

    @settings(max_examples=50, deadline=None)
    @given(conf_maps)
    def test_certain_set_ignores_thresholds(self, cmap):
        # The selection reads raw confidences only; recomputing after any
        # threshold pass changes nothing.
        before = trimap_select(cmap).certain
        for t in THRESHOLD_LEVELS:
            threshold_map(cmap, t)
        assert np.array_equal(trimap_select(cmap).certain, before)


class TestForegroundFraction:
    def test_all_ones(self):
        mask = np.ones((NUM_CHANNELS, 2, 2), dtype=np.uint8)
        assert foreground_fraction(mask, 0) == 1.0

    def test_quarter(self):
        mask = np.zeros((NUM_CHANNELS, 2, 2), dtype=np.uint8)
        mask[3, 1, 1] = 1
        assert foreground_fraction(mask, 3) == 0.25

    def test_all_zero(self):
        mask = np.zeros((NUM_CHANNELS, 2, 2), dtype=np.uint8)
        assert foreground_fraction(mask, 5) == 0.0

    def test_bad_channel(self):
        mask = np.zeros((NUM_CHANNELS, 2, 2), dtype=np.uint8)
        with pytest.raises(IndexError):
            foreground_fraction(mask, 6)

    @settings(max_examples=100, deadline=None)
    @given(conf_maps)
    def test_fraction_non_increasing_in_threshold(self, cmap):
        for c in range(NUM_CHANNELS):
            fracs = [
                foreground_fraction(threshold_map(cmap, t), c)
                for t in THRESHOLD_LEVELS
            ]
            assert all(b <= a for a, b in zip(fracs, fracs[1:]))
