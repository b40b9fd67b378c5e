import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeswap.imagekit import (DEFAULT_BOX, Domain, EyeBox, FaceImage, composite_eye_region, crop_eye_region,
                              eye_region_pixels, image_grid, mask_eye_region, preprocess)


def rand_image(h=64, w=64, seed=0):
    g = torch.Generator().manual_seed(seed)
    return FaceImage(torch.rand(3, h, w, generator=g) * 2 - 1, Domain.A, "x")


@pytest.mark.parametrize("h, w, expected", [
    (224, 224, (89, 44, 145, 168)),
    (100, 100, (40, 20, 65, 75)),
    (64, 64, (25, 12, 41, 48)),
])
def test_eye_region_examples(h, w, expected):
    # oracle: floor of each fraction times its side
    oracle = (math.floor(0.4 * h), math.floor(0.2 * w), math.floor(0.65 * h), math.floor(0.75 * w))
    assert oracle == expected
    assert eye_region_pixels(DEFAULT_BOX, h, w) == expected


def test_eye_region_rejects_degenerate():
    assert eye_region_pixels(DEFAULT_BOX, 8, 8) == (3, 1, 5, 6)
    with pytest.raises(ValueError):
        eye_region_pixels(DEFAULT_BOX, 1, 64)
    with pytest.raises(ValueError):
        eye_region_pixels(DEFAULT_BOX, 64, 1)


def test_eyebox_invariants():
    with pytest.raises(ValueError):
        EyeBox(row_lo_frac=0.7, row_hi_frac=0.6)
    with pytest.raises(ValueError):
        EyeBox(col_lo_frac=0.2, col_hi_frac=1.2)


@given(st.integers(16, 512), st.integers(16, 512))
def test_eye_region_in_bounds_and_monotone(h, w):
    r0, c0, r1, c1 = eye_region_pixels(DEFAULT_BOX, h, w)
    assert 0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w
    R0, C0, R1, C1 = eye_region_pixels(DEFAULT_BOX, h + 1, w + 1)
    assert R0 >= r0 and R1 >= r1 and C0 >= c0 and C1 >= c1


def test_face_image_invariants():
    with pytest.raises(ValueError):
        FaceImage(torch.zeros(3, 15, 16))
    with pytest.raises(ValueError):
        FaceImage(torch.zeros(3, 17, 18))
    with pytest.raises(ValueError):
        FaceImage(torch.full((3, 16, 16), 1.5))


def test_mask_zeros_is_identity():
    img = FaceImage(torch.zeros(3, 64, 64))
    assert torch.equal(mask_eye_region(img).pixels, img.pixels)


def test_mask_ones_64():
    img = FaceImage(torch.ones(3, 64, 64))
    out = mask_eye_region(img).pixels
    expected = torch.ones(3, 64, 64)
    expected[:, 25:41, 12:48] = 0
    assert torch.equal(out, expected)


def test_mask_leaves_outside_untouched():
    img = rand_image()
    out = mask_eye_region(img).pixels
    r0, c0, r1, c1 = eye_region_pixels(DEFAULT_BOX, 64, 64)
    inside = torch.zeros(64, 64, dtype=torch.bool)
    inside[r0:r1, c0:c1] = True
    assert torch.equal(out[:, ~inside], img.pixels[:, ~inside])
    assert torch.all(out[:, inside] == 0)


def test_crop_shapes_and_masked_crop():
    img = rand_image(224, 224)
    assert crop_eye_region(img).shape == (3, 56, 124)
    assert torch.all(crop_eye_region(mask_eye_region(img)) == 0)


def test_crop_inverts_composite():
    img = rand_image(seed=1)
    patch = torch.rand(3, 16, 36) * 2 - 1
    assert torch.equal(crop_eye_region(composite_eye_region(img, patch)), patch)


def test_composite_round_trip_and_outside():
    img = rand_image(seed=2)
    assert torch.equal(composite_eye_region(img, crop_eye_region(img)).pixels, img.pixels)
    zeros = FaceImage(torch.zeros(3, 64, 64))
    out = composite_eye_region(zeros, torch.ones(3, 16, 36)).pixels
    expected = torch.zeros(3, 64, 64)
    expected[:, 25:41, 12:48] = 1
    assert torch.equal(out, expected)


def test_composite_shape_mismatch():
    with pytest.raises(ValueError):
        composite_eye_region(rand_image(), torch.zeros(3, 10, 10))


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 64).map(lambda n: 2 * n), st.integers(8, 64).map(lambda n: 2 * n), st.integers(0, 2**31))
def test_mask_crop_composite_reconstructs(h, w, seed):
    img = rand_image(h, w, seed)
    back = composite_eye_region(mask_eye_region(img), crop_eye_region(img))
    assert torch.equal(back.pixels, img.pixels)


def test_region_ops_work_on_batches():
    x = torch.rand(5, 3, 32, 32)
    assert crop_eye_region(x).shape == (5, 3, 8, 18)
    assert torch.equal(composite_eye_region(mask_eye_region(x), crop_eye_region(x)), x)


def test_preprocess_celeba_geometry():
    raw = np.random.default_rng(0).integers(0, 256, size=(218, 178, 3), dtype=np.uint8)
    img = preprocess(raw, training=False, resolution=224)
    assert img.pixels.shape == (3, 224, 224)
    assert img.pixels.min() >= -1 and img.pixels.max() <= 1


def test_preprocess_without_augmentation_is_pure():
    raw = np.random.default_rng(1).integers(0, 256, size=(200, 190, 3), dtype=np.uint8)
    a = preprocess(raw, training=False, resolution=64)
    b = preprocess(raw.copy(), training=False, resolution=64)
    assert torch.equal(a.pixels, b.pixels)


def test_preprocess_range_endpoints():
    white = np.full((170, 170, 3), 255, dtype=np.uint8)
    assert torch.all(preprocess(white, resolution=64).pixels == 1.0)
    black = np.zeros((170, 170, 3), dtype=np.uint8)
    assert torch.all(preprocess(black, resolution=64).pixels == -1.0)


def test_preprocess_rejects_small():
    with pytest.raises(ValueError):
        preprocess(np.zeros((150, 200, 3), dtype=np.uint8))


def test_preprocess_flip_is_seeded():
    raw = np.zeros((160, 160, 3), dtype=np.uint8)
    raw[:, :80] = 255
    flips = []
    for seed in range(40):
        img = preprocess(raw, training=True, rng=np.random.default_rng(seed), resolution=160)
        flips.append(bool(img.pixels[0, 0, 0] < 0))
        again = preprocess(raw, training=True, rng=np.random.default_rng(seed), resolution=160)
        assert torch.equal(img.pixels, again.pixels)
    assert 0 < sum(flips) < 40


def test_image_grid_layout():
    imgs = [FaceImage(torch.full((3, 16, 16), -1.0)) for _ in range(5)]
    grid = image_grid(imgs, ncols=3)
    assert grid.size == (3 * 16 + 2 * 2, 2 * 16 + 2)
    arr = np.asarray(grid)
    assert np.all(arr[:, 16:18] == 255)
    assert np.all(arr[0, 0] == 0)
