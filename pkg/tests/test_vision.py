import math

import numpy as np
import pytest

from oracles import best_box, lbp_codes
from roma.errors import ContractError, ShapeError
from roma.vision import (
    LBPDescriptor, RegionBox, ScoreMap, adaptive_region_select, apply_rotation_augment, best_candidate_box,
    candidate_boxes, covered_patches, crop_source_coords, entropy_bits, grayscale, inscribed_rotate_crop,
    inscribed_side, lbp_map, patch_scores, random_crop_baseline, read_image, select_region, select_top_patch,
    split_patches, write_png, write_ppm,
)
from roma.vision.image import merge_patches


def test_split_patches_grid_and_index_convention():
    img = np.random.default_rng(0).random((192, 192, 3))
    grid = split_patches(img, 16)
    assert (grid.rows, grid.cols, grid.n) == (12, 12, 144)
    assert grid.position(12) == (1, 0)
    np.testing.assert_array_equal(merge_patches(grid), img)
    np.testing.assert_array_equal(grid.patches[13].reshape(16, 16, 3), img[16:32, 16:32])


def test_split_patches_rejects_indivisible_side():
    with pytest.raises(ShapeError, match="196"):
        split_patches(np.zeros((196, 196, 3)), 16)


def test_lbp_constant_image_is_all_zero():
    assert not lbp_map(np.full((8, 8, 3), 0.4)).any()


def test_lbp_matches_window_oracle():
    img = np.random.default_rng(1).integers(0, 4, (9, 11, 3)) / 3.0
    np.testing.assert_array_equal(lbp_map(img), lbp_codes(grayscale(img)))


def test_lbp_horizontal_ramp():
    ramp = np.tile(np.linspace(0, 1, 10), (10, 1))
    codes = lbp_map(ramp)
    east = (1 << 2) | (1 << 3) | (1 << 4)
    west = (1 << 0) | (1 << 7) | (1 << 6)
    interior = codes[1:-1, 1:-1]
    assert np.all(interior & east == east)
    assert not np.any(interior & west)
    np.testing.assert_array_equal(codes, lbp_codes(grayscale(ramp)))


def test_lbp_single_bright_pixel():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    codes = lbp_map(img)
    offsets = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
    for bit, (dy, dx) in enumerate(offsets):
        # the neighbour at (2-dy, 2-dx) sees the bright pixel in direction (dy, dx)
        assert codes[2 - dy, 2 - dx] == 1 << bit
    assert codes[2, 2] == 0


def test_entropy_closed_forms():
    assert entropy_bits(np.bincount([5] * 64, minlength=256)) == 0.0
    assert entropy_bits(np.bincount([1, 2] * 32, minlength=256)) == pytest.approx(1.0)


def test_scores_ignore_a_global_brightness_shift():
    img = np.random.default_rng(2).random((32, 32, 3)) * 0.8
    a = LBPDescriptor()(img, 8).scores
    b = LBPDescriptor()(img + 0.1, 8).scores
    np.testing.assert_array_equal(a, b)


def test_select_top_patch_ties_and_planted_texture():
    assert select_top_patch([0, 5, 3]) == 1
    assert select_top_patch([2, 2, 2]) == 0
    img = np.full((32, 32, 3), 0.5)
    img[8:16, 16:24] = np.random.default_rng(3).random((8, 8, 3))
    scores = LBPDescriptor()(img, 8)
    assert select_top_patch(scores) == int(np.argmax(scores.scores)) == 1 * 4 + 2


def test_corner_patch_has_one_candidate():
    scores = ScoreMap(np.random.default_rng(4).random(144), 12, 12)
    cands = candidate_boxes(scores, 0, 96, 16)
    assert [b for b, _ in cands] == [RegionBox(0, 0, 96)]


def test_uniform_scores_pick_top_left_most_box():
    scores = ScoreMap(np.ones(144), 12, 12)
    box, _ = best_candidate_box(scores, 6 * 12 + 7, 96, 16)
    assert box == RegionBox(16, 32, 96)


def test_oversized_box_is_contract_error():
    with pytest.raises(ContractError):
        best_candidate_box(ScoreMap(np.ones(16), 4, 4), 0, 80, 16)


@pytest.mark.parametrize("side", [2, 5, 12, 16])
def test_best_box_matches_exhaustive_search(side):
    rng = np.random.default_rng(side)
    for _ in range(20):
        grid = rng.random((side, side))
        scores = ScoreMap(grid.ravel(), side, side)
        top = int(rng.integers(side * side))
        m = int(rng.integers(1, side + 1))
        box, val = best_candidate_box(scores, top, m * 4, 4)
        (i, j), ref = best_box(grid, top // side, top % side, m)
        assert (box.top, box.left) == (i * 4, j * 4)
        assert val == pytest.approx(ref, abs=1e-15)


def test_textured_corner_is_accepted_at_the_largest_side():
    img = np.full((192, 192, 3), 0.5)
    img[:96, :96] = np.random.default_rng(5).random((96, 96, 3))
    box = select_region(img, 16, (96, 64, 32))
    assert box == RegionBox(0, 0, 96)


def test_small_texture_falls_through_to_smallest_side():
    # a textured 2x2 core inside a flat moat; textured cells outside the moat lift the image mean
    grid = np.full((12, 12), 5.0)
    grid[2:10, 2:10] = 0.0
    grid[5:7, 5:7] = 8.0
    grid[0, 11] = grid[11, 0] = 7.0
    scores = ScoreMap(grid.ravel(), 12, 12)
    top = select_top_patch(scores)
    bar = scores.image_mean
    assert best_candidate_box(scores, top, 96, 16)[1] < bar
    assert best_candidate_box(scores, top, 64, 16)[1] < bar
    assert adaptive_region_select(scores, top, (96, 64, 32), 16) == RegionBox(80, 80, 32)


def test_uniform_image_selects_nothing_and_is_untouched():
    img = np.full((64, 64, 3), 0.3)
    out, rec = apply_rotation_augment(img, np.random.default_rng(0), 8, (48, 32, 16))
    assert rec.applied is False and rec.box is None and rec.theta is None
    assert out is img


def test_ladder_must_descend():
    with pytest.raises(ContractError):
        adaptive_region_select(ScoreMap(np.ones(16), 4, 4), 0, (16, 32), 8)


def test_inscribed_side_and_identity_crop():
    assert inscribed_side(96) == 67
    img = np.random.default_rng(7).random((96, 96, 3))
    out = inscribed_rotate_crop(img, RegionBox(0, 0, 96), 0.0)
    assert out.shape == (96, 96, 3)
    ys, xs = crop_source_coords(96, 0.0)
    assert ys[0, 0] == pytest.approx((96 - 67) / 2.0)


@pytest.mark.parametrize("theta", np.linspace(0, 2 * math.pi, 13))
def test_crop_sources_stay_in_the_inscribed_circle(theta):
    for side in (16, 32, 48, 96):
        ys, xs = crop_source_coords(side, float(theta))
        c = side / 2.0 - 0.5
        assert np.all((ys - c) ** 2 + (xs - c) ** 2 <= (side / 2.0) ** 2 + 0.5)


def test_half_turn_mirrors_both_axes():
    img = np.random.default_rng(8).random((48, 48, 3))
    a = inscribed_rotate_crop(img, RegionBox(0, 0, 48), 0.0)
    b = inscribed_rotate_crop(img, RegionBox(0, 0, 48), math.pi)
    np.testing.assert_allclose(b, a[::-1, ::-1], atol=1e-6)


def test_augment_touches_only_the_box():
    img = np.full((64, 64, 3), 0.5)
    img[8:40, 16:48] = np.random.default_rng(9).random((32, 32, 3))
    out, rec = apply_rotation_augment(img, np.random.default_rng(1), 8, (48, 32, 16))
    assert rec.applied
    outside = np.ones((64, 64), dtype=bool)
    outside[rec.box.slices()] = False
    np.testing.assert_array_equal(out[outside], img[outside])
    assert 0.0 <= rec.theta < 2 * math.pi


def test_covered_patches_of_top_left_box():
    cov = covered_patches(RegionBox(0, 0, 96), 16, 12)
    assert cov == frozenset(r * 12 + c for r in range(6) for c in range(6))
    assert len(cov) == 36


def test_random_crop_baseline_contract():
    assert random_crop_baseline((192, 192), 192, 5, 16) == RegionBox(0, 0, 192)
    assert random_crop_baseline((192, 192), 96, 11, 16) == random_crop_baseline((192, 192), 96, 11, 16)
    with pytest.raises(ContractError):
        random_crop_baseline((64, 64), 96, 0)


def test_random_crop_covers_every_aligned_position():
    rng = np.random.default_rng(10)
    seen = {(b.top, b.left) for b in (random_crop_baseline((192, 192), 96, rng, 16) for _ in range(10_000))}
    assert len(seen) == 49


def test_png_and_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(11).integers(0, 256, (8, 8, 3)) / 255.0
    write_png(tmp_path / "a.png", img)
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), img)
    np.testing.assert_array_equal(read_image(tmp_path / "a.ppm"), img)


def test_patch_scores_reads_codes_per_patch():
    codes = np.zeros((16, 16), dtype=np.uint8)
    codes[:8, 8:] = np.tile([1, 2], 32).reshape(8, 8)
    scores = patch_scores(split_patches(np.zeros((16, 16, 1)), 8), codes)
    np.testing.assert_allclose(scores.scores, [0.0, 1.0, 0.0, 0.0])
    assert scores.image_mean == pytest.approx(0.25)
