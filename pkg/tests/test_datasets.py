"""Data generation determinism, standardization and the PLDS format."""

import numpy as np
import pytest

from plislab import datasets
from plislab.errors import ConfigError, DataFormatError


class TestMakeRegression:
    def test_deterministic_under_seed(self):
        a = datasets.make_regression(50, 8, {3}, 0.1, seed=5)
        b = datasets.make_regression(50, 8, {3}, 0.1, seed=5)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        c = datasets.make_regression(50, 8, {3}, 0.1, seed=6)
        assert not np.array_equal(a.X, c.X)

    def test_columns_standardized(self):
        ds = datasets.make_regression(200, 6, {1, 4}, 0.2, seed=1)
        assert np.abs(ds.X.mean(axis=0)).max() < 1e-8
        assert np.abs(ds.X.std(axis=0) - 1.0).max() < 1e-8

    def test_noiseless_single_feature_exactly_proportional(self):
        ds = datasets.make_regression(30, 1, {0}, 0.0, seed=2)
        ratio = ds.y / ds.X[:, 0]
        np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)

    def test_permuting_uninformative_column_leaves_y_unchanged(self):
        ds = datasets.make_regression(40, 5, {2}, 0.3, seed=3)
        noise = ds.y - ds.X[:, ds.informative_mask] @ ds.w_star
        shuffled = ds.X.copy()
        shuffled[:, 0] = np.roll(shuffled[:, 0], 7)  # uninformative column
        rebuilt = shuffled[:, ds.informative_mask] @ ds.w_star + noise
        np.testing.assert_allclose(rebuilt, ds.y, rtol=1e-12)

    def test_ols_finds_no_signal_on_uninformative_features(self):
        ds = datasets.make_regression(400, 6, {2}, 0.5, seed=4)
        coef, _, _, _ = np.linalg.lstsq(ds.X, ds.y, rcond=None)
        residual = ds.y - ds.X @ coef
        dof = ds.n - ds.d
        sigma2 = residual @ residual / dof
        cov = sigma2 * np.linalg.inv(ds.X.T @ ds.X)
        se = np.sqrt(np.diag(cov))
        for j in range(ds.d):
            if ds.informative_mask[j]:
                assert abs(coef[j]) > 3 * se[j]
            else:
                assert abs(coef[j]) < 3 * se[j]

    def test_empty_informative_rejected(self):
        with pytest.raises(ConfigError):
            datasets.make_regression(10, 4, set(), 0.1, seed=0)

    def test_out_of_range_informative_rejected(self):
        with pytest.raises(ConfigError):
            datasets.make_regression(10, 4, {4}, 0.1, seed=0)

    def test_csv_roundtrip(self, tmp_path):
        ds = datasets.make_regression(25, 3, {0}, 0.2, seed=9)
        path = tmp_path / "reg.csv"
        datasets.save_regression_csv(ds, path)
        x, y = datasets.load_regression_csv(path)
        np.testing.assert_array_equal(x, ds.X)
        np.testing.assert_array_equal(y, ds.y)


class TestGlyphImages:
    def test_deterministic_and_balanced(self):
        a = datasets.make_glyph_images(20, seed=7)
        b = datasets.make_glyph_images(20, seed=7)
        np.testing.assert_array_equal(a.images, b.images)
        assert a.labels.sum() == 10
        assert not a.ood_flags.any()

    def test_pixels_in_unit_range(self):
        ds = datasets.make_glyph_images(16, seed=8)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_classes_are_visually_distinct(self):
        ds = datasets.make_glyph_images(40, seed=9)
        cross_mass = ds.images[ds.labels == 0].mean(axis=0)
        ring_mass = ds.images[ds.labels == 1].mean(axis=0)
        assert np.abs(cross_mass - ring_mass).max() > 0.2


class TestInjectOod:
    def test_zero_injection_returns_dataset_unchanged(self):
        ds = datasets.make_glyph_images(10, seed=1)
        assert datasets.inject_ood(ds, 0, seed=2) is ds

    def test_injected_count_equals_flag_count(self):
        ds = datasets.make_glyph_images(10, seed=1)
        out = datasets.inject_ood(ds, 5, seed=2)
        assert out.n == 15
        assert out.ood_flags.sum() == 5
        assert not out.ood_flags[:10].any()
        assert out.ood_flags[10:].all()
        assert np.all(out.labels < out.classes)

    def test_ood_textures_differ_from_glyphs(self):
        ds = datasets.inject_ood(datasets.make_glyph_images(10, seed=3), 3, seed=4)
        # glyphs are mostly dark; interference textures fill the frame
        glyph_mean = ds.images[~ds.ood_flags].mean()
        ood_mean = ds.images[ds.ood_flags].mean()
        assert ood_mean > glyph_mean + 0.2


class TestPldsFormat:
    def test_roundtrip_bit_identical(self, tmp_path):
        ds = datasets.inject_ood(datasets.make_glyph_images(12, seed=5), 2, seed=6)
        path = tmp_path / "data.plds"
        datasets.write_plds(ds, path)
        loaded = datasets.load_images(path)
        np.testing.assert_array_equal(loaded.images, ds.images)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        np.testing.assert_array_equal(loaded.ood_flags, ds.ood_flags)
        assert loaded.classes == ds.classes
        second = tmp_path / "again.plds"
        datasets.write_plds(loaded, second)
        assert second.read_bytes() == path.read_bytes()

    def test_bad_magic_reports_offset(self, tmp_path):
        path = tmp_path / "bad.plds"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(DataFormatError, match="byte 0"):
            datasets.load_images(path)

    def test_truncation_reports_offset(self, tmp_path):
        ds = datasets.make_glyph_images(4, seed=1)
        path = tmp_path / "data.plds"
        datasets.write_plds(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(DataFormatError, match="byte"):
            datasets.load_images(path)


def test_subject_adapters():
    ds = datasets.make_glyph_images(4, seed=2)
    subjects = datasets.image_subjects(ds)
    assert [s.id for s in subjects] == ["img00000", "img00001", "img00002", "img00003"]
    assert subjects[0].x.shape == (1, 28, 28)
    reg = datasets.make_regression(3, 4, {1}, 0.1, seed=3)
    rows = datasets.tabular_subjects(reg.X, reg.y)
    assert rows[2].id == "row00002" and rows[2].x.shape == (4,)
