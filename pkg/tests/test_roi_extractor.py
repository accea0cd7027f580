from __future__ import annotations

import numpy as np
import pytest

from echofinder.config import RoiConfig
from echofinder.errors import DataError, ShapeMismatchError
from echofinder.models import BoundingBox
from echofinder.roi_extractor import (
    adaptive_threshold,
    channel_consensus,
    connected_components,
    extract_rois,
    extract_stages,
    filter_components,
    median_filter_time,
    morph_close,
    morph_open,
    score_matrix,
)


def naive_median(grid, k):
    h, w = grid.shape
    r = k // 2
    out = np.empty_like(grid)
    for y in range(h):
        for x in range(w):
            window = [grid[y, min(max(x + d, 0), w - 1)] for d in range(-r, r + 1)]
            out[y, x] = sorted(window)[r]
    return out


def naive_threshold(grid, window, t):
    # 与实现一致，先量化到 24 位定点网格
    grid = np.rint(grid * 2**24) / 2**24
    h, w = grid.shape
    r = window // 2
    out = np.zeros((h, w), dtype=bool)
    for y in range(h):
        for x in range(w):
            patch = grid[max(0, y - r) : y + r + 1, max(0, x - r) : x + r + 1]
            out[y, x] = grid[y, x] * (1 - t) > patch.mean()
    return out


def test_median_examples():
    assert median_filter_time(np.array([[1.0, 9.0, 1.0]]), 3).tolist() == [[1.0, 1.0, 1.0]]
    grid = np.random.default_rng(0).random((4, 6))
    assert np.array_equal(median_filter_time(grid, 1), grid)
    constant = np.full((3, 7), 0.25)
    assert np.array_equal(median_filter_time(constant, 5), constant)


@pytest.mark.parametrize("k", [0, 2, -3, 4])
def test_median_rejects_bad_kernel(k):
    with pytest.raises(DataError):
        median_filter_time(np.zeros((2, 2)), k)


def test_median_matches_sort_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h, w = (int(v) for v in rng.integers(1, 40, size=2))
        grid = rng.random((h, w))
        k = int(rng.choice([1, 3, 5, 7]))
        assert np.array_equal(median_filter_time(grid, k), naive_median(grid, k))


def test_threshold_examples():
    assert not adaptive_threshold(np.full((20, 20), 0.6), 5, 0.15).any()
    assert not adaptive_threshold(np.zeros((20, 20)), 5, 0.15).any()
    grid = np.zeros((5, 5))
    grid[2, 2] = 1.0
    mask = adaptive_threshold(grid, 3, 0.15)
    assert mask[2, 2]
    assert mask.sum() == 1


def test_threshold_matches_naive_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        h, w = (int(v) for v in rng.integers(1, 65, size=2))
        grid = rng.random((h, w))
        window = int(rng.choice([3, 5, 9, 15]))
        t = float(rng.uniform(0.05, 0.5))
        assert np.array_equal(adaptive_threshold(grid, window, t), naive_threshold(grid, window, t))


def test_threshold_matches_oracle_on_quantized_plateaus():
    rng = np.random.default_rng(4)
    for _ in range(20):
        grid = rng.integers(0, 4, size=(24, 24)) / 4.0
        assert np.array_equal(adaptive_threshold(grid, 5, 0.25), naive_threshold(grid, 5, 0.25))


@pytest.mark.parametrize(("window", "t"), [(2, 0.1), (1, 0.1), (5, 0.0), (5, 1.0)])
def test_threshold_rejects_bad_parameters(window, t):
    with pytest.raises(DataError):
        adaptive_threshold(np.zeros((5, 5)), window, t)


def test_threshold_rejects_out_of_range_values():
    with pytest.raises(DataError):
        adaptive_threshold(np.full((3, 3), 1.5), 3, 0.1)


def test_morphology_examples():
    single = np.zeros((7, 7), dtype=bool)
    single[3, 3] = True
    assert not morph_open(single, 1).any()
    block = np.zeros((9, 9), dtype=bool)
    block[2:7, 2:7] = True
    holed = block.copy()
    holed[4, 4] = False
    assert np.array_equal(morph_close(holed, 1), block)
    full = np.ones((6, 8), dtype=bool)
    assert morph_close(morph_open(full, 1), 1).all()


def test_close_keeps_border_pixels():
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0] = True
    assert morph_close(mask, 1)[0, 0]


def test_morphology_laws_on_random_masks():
    rng = np.random.default_rng(5)
    for _ in range(100):
        mask = rng.random((int(rng.integers(3, 30)), int(rng.integers(3, 30)))) < rng.uniform(0.2, 0.8)
        r = int(rng.integers(1, 3))
        opened = morph_open(mask, r)
        closed = morph_close(mask, r)
        assert not (opened & ~mask).any()
        assert not (mask & ~closed).any()
        assert np.array_equal(morph_open(opened, r), opened)
        assert np.array_equal(morph_close(closed, r), closed)


def test_consensus_examples():
    on = np.ones((2, 2), dtype=bool)
    off = np.zeros((2, 2), dtype=bool)
    assert channel_consensus([on, on, on, off], 3).all()
    assert not channel_consensus([on, on, off, off], 3).any()
    mask = np.array([[True, False], [False, True]])
    assert np.array_equal(channel_consensus([mask], 1), mask)
    assert score_matrix([on, on, off, on]).tolist() == [[3, 3], [3, 3]]


def test_consensus_errors_and_monotonicity():
    with pytest.raises(DataError):
        channel_consensus([], 1)
    with pytest.raises(ShapeMismatchError):
        channel_consensus([np.zeros((2, 2), bool), np.zeros((2, 3), bool)], 1)
    with pytest.raises(DataError):
        channel_consensus([np.zeros((2, 2), bool)], 2)
    rng = np.random.default_rng(6)
    masks = [rng.random((10, 10)) < 0.5 for _ in range(4)]
    before = channel_consensus(masks, 3)
    masks[1] = masks[1] | (rng.random((10, 10)) < 0.2)
    assert not (before & ~channel_consensus(masks, 3)).any()


def flood_fill_partition(mask):
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    parts = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            stack, members = [(y, x)], set()
            seen[y, x] = True
            while stack:
                cy, cx = stack.pop()
                members.add((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            parts.append(frozenset(members))
    return set(parts)


def test_components_match_flood_fill():
    rng = np.random.default_rng(7)
    for _ in range(50):
        mask = rng.random((32, 32)) < rng.uniform(0.1, 0.6)
        regions = connected_components(mask)
        partition = {frozenset(zip(r.pixels[0].tolist(), r.pixels[1].tolist())) for r in regions}
        assert partition == flood_fill_partition(mask)
        keys = [(r.box.y, r.box.x) for r in regions]
        assert keys == sorted(keys)
        for r in regions:
            ys, xs = r.pixels
            assert r.pixel_count == len(ys)
            assert r.box == BoundingBox(int(xs.min()), int(ys.min()), int(np.ptp(xs)) + 1, int(np.ptp(ys)) + 1)
            assert 0.0 <= r.orientation_deg <= 90.0


def test_components_examples():
    assert connected_components(np.zeros((4, 4), dtype=bool)) == []
    diagonal = np.zeros((4, 4), dtype=bool)
    diagonal[1, 1] = diagonal[2, 2] = True
    regions = connected_components(diagonal)
    assert len(regions) == 1 and regions[0].pixel_count == 2


def _bar(h, w, size=40):
    mask = np.zeros((size, size), dtype=bool)
    mask[2 : 2 + h, 2 : 2 + w] = True
    return connected_components(mask)[0]


def test_filter_examples():
    cfg = RoiConfig()
    small = np.zeros((20, 20), dtype=bool)
    small[0:7, 0:7] = True
    region_49 = connected_components(small)[0]
    assert region_49.pixel_count == 49
    horizontal = _bar(3, 30)
    vertical = _bar(30, 3)
    assert horizontal.orientation_deg == pytest.approx(0.0)
    assert vertical.orientation_deg == pytest.approx(90.0)
    kept = filter_components([region_49, horizontal, vertical], cfg)
    assert kept == [vertical]


def test_filter_boundaries_are_inclusive():
    cfg = RoiConfig(min_area_px=49, min_orientation_deg=90.0)
    block = np.zeros((10, 10), dtype=bool)
    block[0:7, 0:7] = True
    square = connected_components(block)[0]
    assert square.pixel_count == 49
    assert square.orientation_deg == 90.0
    assert filter_components([square], cfg) == [square]
    assert filter_components([square], RoiConfig(min_area_px=50)) == []


def test_orientation_invariant_under_rotation():
    rng = np.random.default_rng(8)
    for _ in range(20):
        mask = rng.random((12, 12)) < 0.5
        mask = np.pad(mask, 1)
        for region in connected_components(mask):
            sub = np.zeros_like(mask)
            sub[region.pixels] = True
            rotated = connected_components(sub[::-1, ::-1])[0]
            assert rotated.orientation_deg == pytest.approx(region.orientation_deg, abs=1e-9)


def test_extract_single_vertical_blob(blob_echogram, roi_config):
    truth = BoundingBox(50, 20, 10, 60)
    rois = extract_rois(blob_echogram(truth), roi_config)
    assert rois == [truth]


def test_blob_in_two_channels_is_dropped(blob_echogram, roi_config):
    assert extract_rois(blob_echogram(BoundingBox(50, 20, 10, 60), channels=(0, 2)), roi_config) == []


def test_horizontal_blob_is_dropped(blob_echogram, roi_config):
    assert extract_rois(blob_echogram(BoundingBox(20, 40, 60, 10)), roi_config) == []


def test_constant_echogram_has_no_rois(make_echogram, roi_config):
    assert extract_rois(make_echogram(np.full((4, 80, 90), -50.0)), roi_config) == []


def test_extraction_is_deterministic_and_bounded(make_echogram, roi_config):
    rng = np.random.default_rng(9)
    e = make_echogram(rng.normal(-62, 3, size=(4, 90, 120)))
    first = extract_rois(e, roi_config)
    assert first == extract_rois(e, roi_config)
    for box in first:
        assert box.fits(e.width, e.height)


def test_stages_shapes(blob_echogram, roi_config):
    e = blob_echogram(BoundingBox(50, 20, 10, 60))
    stages = extract_stages(e, roi_config)
    assert stages.filtered.shape == (4, 100, 120)
    assert stages.binarized.dtype == bool and stages.morphed.shape == (4, 100, 120)
    assert stages.scores.max() == 4
    assert [r.box for r in stages.regions] == [BoundingBox(50, 20, 10, 60)]
