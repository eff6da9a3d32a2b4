import numpy as np
import pytest
from scipy import ndimage

from hpix.errors import ConfigError, DataError, ShapeError
from hpix.postprocess import (
    BuildingLabelMap,
    OverlayStyle,
    annotations_dict,
    classify_buildings,
    compose_overlay,
    disc_pixels,
    find_branch_points,
    merge_close_points,
    road_intersections,
    skeletonize,
)


def plus_sign(size=256, width=15, center=None):
    mask = np.zeros((size, size), np.uint8)
    r, c = center or (size // 2, size // 2)
    half = width // 2
    mask[r - half : r + half + 1, :] = 255
    mask[:, c - half : c + half + 1] = 255
    return mask


def euler_characteristic(mask):
    """Components (8-connected) minus holes (4-connected bg islands)."""
    fg = mask > 0
    n_fg = ndimage.label(fg, structure=np.ones((3, 3)))[0].max() if fg.any() else 0
    bg_labels, n_bg = ndimage.label(~fg)
    border = set(bg_labels[0]) | set(bg_labels[-1]) | set(bg_labels[:, 0]) | set(bg_labels[:, -1])
    holes = sum(1 for lab in range(1, n_bg + 1) if lab not in border)
    return int(n_fg) - holes


class TestRoadIntersections:
    def test_plus_sign_single_center_intersection(self):
        points = road_intersections(plus_sign())
        assert len(points) == 1
        r, c = points[0]
        assert abs(r - 128) <= 5 and abs(c - 128) <= 5

    def test_parallel_bars_have_no_intersections(self):
        mask = np.zeros((256, 256), np.uint8)
        mask[60:75, :] = 255
        mask[180:195, :] = 255
        assert road_intersections(mask) == []

    def test_blank_mask(self):
        assert road_intersections(np.zeros((256, 256), np.uint8)) == []

    def test_rgb_input_accepted(self):
        rgb = np.stack([plus_sign()] * 3, axis=2)
        assert len(road_intersections(rgb)) == 1

    def test_translation_equivariance(self):
        base = plus_sign(size=320, width=15)
        ref = road_intersections(base)
        rng = np.random.default_rng(0)
        for _ in range(10):
            dr, dc = int(rng.integers(-40, 41)), int(rng.integers(-40, 41))
            shifted = np.zeros_like(base)
            h, w = base.shape
            shifted[max(dr, 0) : h + min(dr, 0), max(dc, 0) : w + min(dc, 0)] = base[
                max(-dr, 0) : h + min(-dr, 0), max(-dc, 0) : w + min(-dc, 0)
            ]
            moved = road_intersections(shifted)
            assert moved == sorted((r + dr, c + dc) for r, c in ref)

    def test_coordinates_in_bounds_and_unique(self):
        mask = plus_sign() | plus_sign(center=(64, 64))
        points = road_intersections(mask)
        assert len(points) == len(set(points))
        for r, c in points:
            assert 0 <= r < 256 and 0 <= c < 256

    def test_empty_image_raises(self):
        with pytest.raises(DataError):
            road_intersections(np.zeros((0, 0), np.uint8))


class TestSkeleton:
    def test_one_pixel_wide_except_branches(self):
        skel = skeletonize(plus_sign()) > 0
        branch = set(find_branch_points(skel))
        padded = np.pad(skel.astype(np.uint8), 1)
        counts = sum(
            padded[1 + dr : padded.shape[0] - 1 + dr, 1 + dc : padded.shape[1] - 1 + dc]
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
            if (dr, dc) != (0, 0)
        )
        for r, c in zip(*np.nonzero(skel)):
            if (int(r), int(c)) not in branch:
                assert counts[r, c] <= 2

    def test_skeleton_is_subset_of_mask(self):
        mask = plus_sign()
        skel = skeletonize(mask)
        assert not np.any((skel > 0) & (mask == 0))

    def test_idempotent(self):
        once = skeletonize(plus_sign())
        assert np.array_equal(skeletonize(once), once)

    def test_dilate_erode_preserves_euler_characteristic(self):
        import cv2

        mask = plus_sign()
        kernel = np.ones((3, 3), np.uint8)
        closed = cv2.erode(cv2.dilate(mask, kernel, iterations=5), kernel, iterations=5)
        assert euler_characteristic(closed) == euler_characteristic(mask) == 1

    def test_merge_close_points(self):
        merged = merge_close_points([(10, 10), (12, 12), (100, 100)], radius=10)
        assert merged == [(11, 11), (100, 100)]


class TestClassifyBuildings:
    def _mask_with_squares(self, sizes, origin_step=64, canvas=256):
        mask = np.zeros((canvas, canvas), np.uint8)
        for idx, side in enumerate(sizes):
            r = 10 + idx * origin_step
            mask[r : r + side, 10 : 10 + side] = 255
        return mask

    def test_threshold_labels(self):
        mask = self._mask_with_squares([10, 20, 30])
        result = classify_buildings(mask, resolution=1.0)
        by_area = {round(reg.area_m2): reg.label for reg in result.regions}
        assert by_area == {100: 1, 400: 2, 900: 3}

    def test_labeled_pixels_equal_foreground(self):
        mask = self._mask_with_squares([10, 20, 30])
        result = classify_buildings(mask)
        assert (result.labels > 0).sum() == (mask > 0).sum()

    def test_holes_count_toward_area_but_not_paint(self):
        mask = np.zeros((64, 64), np.uint8)
        mask[10:40, 10:40] = 255
        mask[20:30, 20:30] = 0  # hole
        result = classify_buildings(mask, resolution=1.0)
        assert len(result.regions) == 1
        assert result.regions[0].area_m2 == 900.0  # filled contour
        assert (result.labels > 0).sum() == (mask > 0).sum()
        assert result.regions[0].label == 3

    def test_resolution_doubling_quadruples_areas(self):
        mask = self._mask_with_squares([10, 20, 30])
        low = classify_buildings(mask, resolution=1.0)
        high = classify_buildings(mask, resolution=2.0)
        for a, b in zip(low.regions, high.regions):
            assert b.area_m2 == 4.0 * a.area_m2
            assert b.label >= a.label

    def test_background_changes_are_irrelevant(self):
        mask = self._mask_with_squares([12])
        result_a = classify_buildings(mask)
        result_b = classify_buildings(mask.copy())
        assert np.array_equal(result_a.labels, result_b.labels)

    def test_non_binary_mask_raises(self):
        mask = np.full((16, 16), 17, np.uint8)
        with pytest.raises(DataError):
            classify_buildings(mask)

    def test_bad_thresholds_raise(self):
        mask = self._mask_with_squares([10])
        with pytest.raises(ConfigError):
            classify_buildings(mask, thresholds=(500.0, 250.0))
        with pytest.raises(ConfigError):
            classify_buildings(mask, resolution=0.0)

    def test_eight_connectivity(self):
        mask = np.zeros((32, 32), np.uint8)
        mask[5:10, 5:10] = 255
        mask[10:15, 10:15] = 255  # touches only diagonally
        result = classify_buildings(mask)
        assert len(result.regions) == 1


class TestComposeOverlay:
    def test_empty_annotations_are_a_noop(self):
        tile = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
        out = compose_overlay(tile, [], None)
        assert np.array_equal(out, tile)

    def test_marker_changes_exactly_the_disc(self):
        tile = np.zeros((256, 256, 3), np.uint8)
        out = compose_overlay(tile, [(128, 128)], None, OverlayStyle(marker_radius=4))
        changed = np.any(out != tile, axis=2)
        assert np.array_equal(changed, disc_pixels((128, 128), 4, (256, 256)))

    def test_large_label_painted_blue(self):
        mask = np.zeros((64, 64), np.uint8)
        mask[5:40, 5:40] = 255  # 1225 px -> large
        buildings = classify_buildings(mask)
        tile = np.full((64, 64, 3), 200, np.uint8)
        out = compose_overlay(tile, [], buildings)
        assert (out[mask > 0] == (0, 0, 255)).all()
        assert (out[mask == 0] == 200).all()

    def test_size_mismatch_raises(self):
        tile = np.zeros((32, 32, 3), np.uint8)
        labels = BuildingLabelMap(
            labels=np.zeros((64, 64), np.uint8), resolution=1.0, thresholds=(250, 500)
        )
        with pytest.raises(ShapeError):
            compose_overlay(tile, [], labels)

    def test_out_of_bounds_marker_raises(self):
        tile = np.zeros((32, 32, 3), np.uint8)
        with pytest.raises(ShapeError):
            compose_overlay(tile, [(40, 40)], None)


def test_annotations_dict_schema():
    mask = np.zeros((64, 64), np.uint8)
    mask[4:14, 4:14] = 255
    buildings = classify_buildings(mask)
    payload = annotations_dict([(3, 5)], buildings)
    assert payload["intersections"] == [[3, 5]]
    assert payload["buildings"] == [{"label": 1, "area_m2": 100.0, "bbox": [4, 4, 13, 13]}]
