import numpy as np
import pytest

from aerialmatch import affine, sampler
from aerialmatch.data import crop_to_full
from aerialmatch.errors import ShapeMismatch, SingularTransform
from aerialmatch.tensor import Tensor


def smooth_image(h=48, w=48):
    yy, xx = np.mgrid[0:h, 0:w] / 10.0
    return 0.5 + 0.25 * np.stack([np.sin(xx + yy), np.cos(xx - 0.5 * yy), np.sin(0.7 * xx) * np.cos(0.3 * yy)], -1)


def psnr(a, b):
    return 10 * np.log10(1.0 / np.mean((a - b) ** 2))


def test_lattice_endpoints():
    g = sampler.lattice(3, 5)
    np.testing.assert_array_equal(g[0, 0], [-1, -1])
    np.testing.assert_array_equal(g[-1, -1], [1, 1])
    np.testing.assert_array_equal(g[1, 2], [0, 0])
    with pytest.raises(ShapeMismatch):
        sampler.lattice(1, 4)


def test_identity_grid_hits_knots(rng):
    img = rng.uniform(0, 1, (7, 9, 3))
    np.testing.assert_array_equal(sampler.warp_image(img, affine.IDENTITY), img)


def test_midpoint_interpolation():
    img = np.zeros((2, 2, 1))
    img[:, 1] = 1.0
    out = sampler.sample_image(img, np.array([[[0.0, -1.0], [0.0, 0.0]]]))
    np.testing.assert_allclose(out[..., 0], [[0.5, 0.5]])


def test_bilinear_matches_scalar_formula(rng):
    img = rng.uniform(0, 1, (5, 6, 2))
    px, py = 2.3, 1.6
    x, y = -1 + 2 * px / 5, -1 + 2 * py / 4
    out = sampler.sample_image(img, np.array([[[x, y]]]))[0, 0]
    expect = (
        0.4 * 0.7 * img[1, 2] + 0.4 * 0.3 * img[1, 3] + 0.6 * 0.7 * img[2, 2] + 0.6 * 0.3 * img[2, 3]
    )
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_zero_padding_outside():
    img = np.ones((4, 4, 3))
    out = sampler.sample_image(img, np.array([[[2.0, 0.0], [-3.0, 0.0]]]))
    np.testing.assert_array_equal(out, 0.0)
    cov = sampler.coverage(4, 4, np.array([[[1.0 + 1.0 / 3, 0.0]]]))
    np.testing.assert_allclose(cov, 0.5)


def test_one_pixel_shift(rng):
    img = rng.uniform(0, 1, (6, 8, 3))
    p = affine.IDENTITY.copy()
    p[2] = 2.0 / 7  # one pixel in x
    out = sampler.warp_image(img, p)
    np.testing.assert_allclose(out[:, :-1], img[:, 1:], atol=1e-12)
    np.testing.assert_array_equal(out[:, -1], 0.0)


def test_round_trip_psnr():
    img = smooth_image()
    p = np.array([0.95, 0.08, 0.03, -0.06, 1.02, -0.02])
    back = sampler.warp_image(sampler.warp_image(img, p), affine.invert(p))
    inner = slice(10, -10)
    assert psnr(back[inner, inner], img[inner, inner]) > 30


def test_warp_rejects_singular():
    with pytest.raises(SingularTransform):
        sampler.warp_image(np.zeros((4, 4, 3)), np.zeros(6))


def test_grid_gradient_direction():
    # a horizontal ramp gives d(out)/dx = slope * (w-1)/2 in normalized units
    img = np.tile(np.arange(5.0), (4, 1))[None, None]
    grid = Tensor(np.array([[[[0.1, 0.2]]]]), True)
    out = sampler.bilinear_sample(Tensor(img), grid)
    out.sum().backward()
    np.testing.assert_allclose(grid.grad[0, 0, 0], [2.0, 0.0], atol=1e-12)


def test_batch_grid_shapes(rng):
    grid = sampler.affine_grid(affine.identity(3), 4, 5)
    assert grid.shape == (3, 4, 5, 2)
    src = Tensor(rng.uniform(0, 1, (3, 2, 4, 5)))
    np.testing.assert_allclose(sampler.bilinear_sample(src, grid).data, src.data, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        sampler.bilinear_sample(src, grid[:2])


def test_center_crop_parity():
    img = np.arange(6 * 6 * 3, dtype=float).reshape(6, 6, 3)
    np.testing.assert_array_equal(sampler.center_crop(img, 2, 4), img[2:4, 1:5])
    with pytest.raises(ShapeMismatch):
        sampler.center_crop(img, 3, 4)


def test_crop_frame_commutes_with_warp():
    full, crop = 41, 21
    img = smooth_image(full, full)
    theta = np.array([0.97, 0.05, 0.06, -0.04, 1.01, -0.03])
    via_full = sampler.center_crop(sampler.warp_image(img, crop_to_full(theta, full, crop)), crop, crop)
    # crop frame: sample the full image at the crop lattice mapped by theta, scaled into the full frame
    s = sampler.crop_scale(full, crop)
    grid = affine.apply(theta, sampler.lattice(crop, crop)) * s
    direct = np.clip(sampler.sample_image(img, grid), 0, 1)
    np.testing.assert_allclose(via_full, direct, atol=1e-12)


def test_jitter_collapsed_is_identity(rng):
    img = rng.uniform(0, 1, (5, 5, 3))
    np.testing.assert_array_equal(sampler.color_jitter(img, rng, sampler.JitterRanges.collapsed()), img)


def test_adjust_closed_forms(rng):
    img = rng.uniform(0.1, 0.4, (6, 6, 3))
    np.testing.assert_allclose(sampler.adjust(img, 1.3, 1.0, 1.0), 1.3 * img, atol=1e-15)
    m = (img @ [0.299, 0.587, 0.114]).mean()
    np.testing.assert_allclose(sampler.adjust(img, 1.0, 0.7, 1.0), 0.7 * img + 0.3 * m, atol=1e-15)
    gray = img @ [0.299, 0.587, 0.114]
    np.testing.assert_allclose(sampler.adjust(img, 1.0, 1.0, 0.0), np.repeat(gray[..., None], 3, -1), atol=1e-15)


def test_jitter_stays_in_range(rng):
    img = rng.uniform(0, 1, (8, 8, 3))
    for _ in range(20):
        out = sampler.color_jitter(img, rng)
        assert out.min() >= 0 and out.max() <= 1


def test_jitter_ranges_validation():
    with pytest.raises(ValueError):
        sampler.JitterRanges(brightness=(1.2, 0.8))
