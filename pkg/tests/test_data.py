"""PPM codec round trips, synthetic-dataset determinism, augmentation stats."""

import numpy as np
import pytest

from sparsemim.data import (
    DirectoryDataset,
    PpmError,
    augment,
    hflip,
    load_ppm,
    save_ppm,
    synth_dataset,
)


class TestPpm:
    def test_1x1_red_pixel(self, tmp_path):
        p = tmp_path / "red.ppm"
        p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        img = load_ppm(p)
        np.testing.assert_array_equal(img, np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1))
        out = tmp_path / "red2.ppm"
        save_ppm(out, img)
        np.testing.assert_array_equal(load_ppm(out), img)

    def test_round_trip_error_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((3, 17, 23))
        p = tmp_path / "rt.ppm"
        save_ppm(p, img)
        back = load_ppm(p)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_save_load_idempotent_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((3, 8, 8))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        save_ppm(p1, img)
        save_ppm(p2, load_ppm(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(PpmError, match="magic"):
            load_ppm(p)

    def test_truncated_body(self, tmp_path):
        p = tmp_path / "trunc.ppm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(PpmError, match="truncated"):
            load_ppm(p)

    def test_wrong_maxval(self, tmp_path):
        p = tmp_path / "max.ppm"
        p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(PpmError, match="maxval"):
            load_ppm(p)

    def test_comments_in_header(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# a comment\n1 1\n# another\n255\n" + bytes([10, 20, 30]))
        img = load_ppm(p)
        np.testing.assert_allclose(img.reshape(3), np.array([10, 20, 30]) / 255.0)

    def test_rounding_half_away_from_zero(self, tmp_path):
        img = np.array([0.5 / 255.0, 1.5 / 255.0, 254.5 / 255.0]).reshape(3, 1, 1)
        p = tmp_path / "r.ppm"
        save_ppm(p, img)
        assert list(p.read_bytes()[-3:]) == [1, 2, 255]

    def test_clamping(self, tmp_path):
        img = np.array([-0.5, 0.2, 1.7]).reshape(3, 1, 1)
        p = tmp_path / "cl.ppm"
        save_ppm(p, img)
        assert list(p.read_bytes()[-3:]) == [0, 51, 255]


class TestSynthDataset:
    def test_deterministic(self):
        a = synth_dataset(5, 32, seed=9)
        b = synth_dataset(5, 32, seed=9)
        for i in range(5):
            np.testing.assert_array_equal(a.pixels(i), b.pixels(i))

    def test_empty(self):
        ds = synth_dataset(0, 32, seed=0)
        assert len(ds) == 0 and ds.manifest().entries == []

    def test_non_degenerate_std(self):
        ds = synth_dataset(50, 32, seed=3)
        for i in range(50):
            img = ds.pixels(i)
            assert img.std() > 0.05, f"image {i} too flat"
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_materialize_and_reload(self, tmp_path):
        ds = synth_dataset(3, 16, seed=4)
        manifest = ds.materialize(tmp_path)
        assert len(manifest.entries) == 3
        dd = DirectoryDataset(tmp_path)
        assert len(dd) == 3
        # PPM quantizes to u8: reload matches to within half a level
        assert np.abs(dd.pixels(0) - ds.pixels(0)).max() <= 0.5 / 255.0 + 1e-12

    def test_manifest_ordering(self, tmp_path):
        synth_dataset(12, 8, seed=5).materialize(tmp_path)
        dd = DirectoryDataset(tmp_path)
        assert dd.names == sorted(dd.names)


class TestAugment:
    def test_same_size_is_flip_only(self):
        rng_flip = np.random.default_rng(1)
        img = np.random.default_rng(0).random((3, 8, 8))
        outs = {augment(img, 8, np.random.default_rng(s)).tobytes() for s in range(20)}
        assert outs <= {img.tobytes(), hflip(img).tobytes()}
        assert len(outs) == 2

    def test_double_flip_identity(self):
        img = np.random.default_rng(2).random((3, 6, 6))
        np.testing.assert_array_equal(hflip(hflip(img)), img)

    def test_values_stay_in_range_and_in_bounds(self):
        rng = np.random.default_rng(3)
        img = rng.random((3, 12, 12))
        for s in range(50):
            out = augment(img, 5, np.random.default_rng(s))
            assert out.shape == (3, 5, 5)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_crop_too_large_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            augment(np.zeros((3, 4, 4)), 8, np.random.default_rng(0))

    def test_offsets_uniform_chi2(self):
        # encode each pixel with a unique id; a flip only permutes values
        # inside the crop, so the crop's minimum id is always its origin
        h, out = 8, 4
        k = h - out + 1  # 5 valid offsets per axis
        img = np.zeros((3, h, h))
        img[0] = np.arange(h)[:, None] * h + np.arange(h)[None, :]
        rng = np.random.default_rng(4)
        counts = np.zeros((k, k))
        for _ in range(10_000):
            origin = int(augment(img, out, rng)[0].min())
            counts[divmod(origin, h)] += 1
        expected = 10_000 / (k * k)
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # 24 dof, 99.9% critical value is 51.2; generous margin, seed is fixed
        assert chi2 < 60.0
