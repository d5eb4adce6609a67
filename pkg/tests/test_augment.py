import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvmitosis.pipeline.augment import AugmentConfig, AugmentRecord, apply_record, augment, sample_record
from uvmitosis.targets import GaussianSpec, render_heatmap


def pair(rng, h=16, w=20):
    return rng.random((3, h, w)), rng.random((2, h, w))


class TestFlips:
    def test_hflip_involution(self, rng):
        img, tgt = pair(rng)
        rec = AugmentRecord(hflip=True)
        i2, t2 = apply_record(*apply_record(img, tgt, rec), rec)
        np.testing.assert_array_equal(i2, img)
        np.testing.assert_array_equal(t2, tgt)

    def test_joint_flip_moves_peak(self):
        tgt = np.zeros((2, 10, 12))
        tgt[0, 3, 2] = 1.0
        img = np.repeat(tgt[:1], 3, axis=0)
        i2, t2 = apply_record(img, tgt, AugmentRecord(hflip=True))
        assert t2[0, 3, 12 - 1 - 2] == 1.0 and i2[0, 3, 9] == 1.0
        _, t3 = apply_record(img, tgt, AugmentRecord(vflip=True))
        assert t3[0, 10 - 1 - 3, 2] == 1.0

    def test_scale_one_identity(self, rng):
        img, tgt = pair(rng)
        i2, t2 = apply_record(img, tgt, AugmentRecord(scale=1.0))
        np.testing.assert_array_equal(i2, img)
        np.testing.assert_array_equal(t2, tgt)

    def test_misaligned_rejected(self, rng):
        with pytest.raises(ValueError, match="aligned"):
            apply_record(rng.random((3, 8, 8)), rng.random((2, 8, 9)), AugmentRecord())


class TestSampling:
    def test_disabled_never_flips(self, rng):
        cfg = AugmentConfig(hflip=False, vflip=False, scale_range=(1.0, 1.0))
        assert all(sample_record(cfg, rng) == AugmentRecord() for _ in range(50))

    def test_flip_rate_is_half(self, rng):
        recs = [sample_record(AugmentConfig(), rng) for _ in range(2000)]
        assert 0.45 < np.mean([r.hflip for r in recs]) < 0.55
        assert 0.45 < np.mean([r.vflip for r in recs]) < 0.55
        assert all(0.8 <= r.scale <= 1.2 for r in recs)

    @pytest.mark.parametrize("rng_", [(0.0, 1.2), (1.1, 1.2), (0.8, 0.9)])
    def test_bad_scale_range(self, rng_):
        with pytest.raises(ValueError, match="scale_range"):
            AugmentConfig(scale_range=rng_)

    def test_shapes_preserved(self, rng):
        img, tgt = pair(rng)
        for _ in range(10):
            i2, t2, _ = augment(img, tgt, AugmentConfig(), rng)
            assert i2.shape == img.shape and t2.shape == tgt.shape


class TestAnnotationConsistency:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(8, 23), st.floats(8, 23), st.booleans(), st.booleans(), st.floats(0.8, 1.2))
    def test_peaks_follow_points(self, x, y, hflip, vflip, scale):
        h = w = 32
        tgt = render_heatmap([(x, y, "mitosis")], GaussianSpec(2.0), h, w)
        rec = AugmentRecord(hflip, vflip, scale)
        _, t2 = apply_record(np.zeros((3, h, w)), tgt, rec)
        (px, py), = rec.transform_points([(round(x), round(y))], h, w)
        row, col = np.unravel_index(np.argmax(t2[0]), (h, w))
        assert max(abs(col - px), abs(row - py)) <= 1.0
