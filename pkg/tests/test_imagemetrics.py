"""SSIM/PSNR values and invariances."""

import numpy as np
import pytest

from plislab import imagemetrics as im
from plislab.errors import PlisLabError, ShapeError


def reference_ssim(a, b, window=8, c1=0.01**2, c2=0.03**2):
    """Straightforward loop implementation used as the oracle."""
    h, w = a.shape
    values = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            wa = a[i : i + window, j : j + window]
            wb = b[i : i + window, j : j + window]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a, var_b = wa.var(), wb.var()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


def _random_image(rng, shape=(12, 12)):
    return rng.uniform(0.0, 1.0, size=shape)


class TestSsim:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(0)
        a = _random_image(rng)
        assert im.ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = _random_image(rng), _random_image(rng)
        assert im.ssim(a, b) == pytest.approx(im.ssim(b, a), abs=1e-15)

    def test_checkerboard_vs_inverse_matches_reference_and_is_negative(self):
        yy, xx = np.mgrid[0:16, 0:16]
        board = ((yy + xx) % 2).astype(float)
        inverse = 1.0 - board
        value = im.ssim(board, inverse)
        assert value == pytest.approx(reference_ssim(board, inverse), abs=1e-12)
        assert value < -0.5

    def test_matches_reference_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a, b = _random_image(rng, (10, 14)), _random_image(rng, (10, 14))
            assert im.ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-12)

    def test_bounded_by_one_in_magnitude(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = _random_image(rng), _random_image(rng)
            assert abs(im.ssim(a, b)) <= 1.0 + 1e-12

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            im.ssim(np.zeros((9, 9)), np.zeros((10, 10)))
        with pytest.raises(ShapeError):
            im.ssim(np.zeros((4, 4)), np.zeros((4, 4)))  # below the window size

    def test_gray_image_validates_range(self):
        with pytest.raises(PlisLabError):
            im.GrayImage(np.full((8, 8), 1.5))

    def test_accepts_gray_image_wrapper(self):
        rng = np.random.default_rng(4)
        a = im.GrayImage(_random_image(rng))
        assert im.ssim(a, a) == pytest.approx(1.0)


class TestPsnr:
    def test_identical_capped_sentinel(self):
        a = np.full((8, 8), 0.25)
        assert im.psnr(a, a) == 99.0

    def test_uniform_difference_point_one_is_twenty_db(self):
        a = np.full((8, 8), 0.5)
        b = np.full((8, 8), 0.6)
        assert im.psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a, b = rng.uniform(size=(9, 9)), rng.uniform(size=(9, 9))
        assert im.psnr(a, b) == pytest.approx(im.psnr(b, a), abs=1e-15)

    def test_decreases_with_growing_noise(self):
        rng = np.random.default_rng(6)
        base = rng.uniform(0.3, 0.7, size=(10, 10))
        noise = rng.normal(size=(10, 10))
        values = []
        for amplitude in (0.01, 0.02, 0.05, 0.1, 0.2):
            noisy = np.clip(base + amplitude * noise, 0.0, 1.0)
            values.append(im.psnr(base, noisy))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            im.psnr(np.zeros((8, 8)), np.zeros((8, 9)))
