import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainunet.io import LabelMask, MultiModalVolume
from brainunet.preprocess import (
    CropSpec,
    DegenerateChannelWarning,
    apply_crop,
    compute_crop,
    normalize,
    one_hot_decode,
    one_hot_encode,
    percentile_clip,
    restore_prediction,
)


def _mm(data):
    return MultiModalVolume(data=np.asarray(data, dtype=np.float32))


def _random_vol(rng, dims=(6, 6, 6)):
    data = rng.uniform(0.0, 10.0, size=(3,) + dims).astype(np.float32)
    data[:, :2, :, :] = 0.0  # some background
    return _mm(data)


class TestPercentileClip:
    def test_constant_channel_unchanged(self):
        data = np.zeros((3, 4, 4, 4), dtype=np.float32)
        data[:, 1:, :, :] = 5.0
        vol = _mm(data)
        out = percentile_clip(vol, 1, 99)
        assert np.array_equal(out.data, vol.data)

    def test_sequence_oracle(self):
        # channel holds the values 1..100; with the lower-order-statistic
        # rule, the 1st percentile sits at sorted index floor(0.01*99) = 0
        # and the 99th at floor(0.99*99) = 98, so values clamp to [1, 99].
        data = np.zeros((3, 5, 5, 4), dtype=np.float32)
        for c in range(3):
            data[c] = np.arange(1, 101, dtype=np.float32).reshape(5, 5, 4)
        out = percentile_clip(_mm(data), 1, 99)
        assert out.data.max() == 99.0
        assert out.data.min() == 1.0
        assert np.count_nonzero(out.data[0] == 99.0) == 2  # 99 and clamped 100

    def test_manual_clamp_oracle(self, rng):
        vol = _random_vol(rng)
        out = percentile_clip(vol, 5, 95)
        for c in range(3):
            vals = vol.data[c][vol.data[c] != 0]
            srt = np.sort(vals)
            lo = srt[int(np.floor(0.05 * (len(srt) - 1)))]
            hi = srt[int(np.floor(0.95 * (len(srt) - 1)))]
            expected = vol.data[c].copy()
            nz = expected != 0
            expected[nz] = np.clip(expected[nz], lo, hi)
            assert np.array_equal(out.data[c], expected)

    @pytest.mark.parametrize("seed", range(5))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        vol = _random_vol(rng)
        once = percentile_clip(vol, 2.5, 97.5)
        twice = percentile_clip(once, 2.5, 97.5)
        assert np.array_equal(once.data, twice.data)

    def test_background_untouched(self, rng):
        vol = _random_vol(rng)
        out = percentile_clip(vol, 10, 90)
        assert np.array_equal(out.data == 0, vol.data == 0)

    def test_channels_independent(self, rng):
        vol = _random_vol(rng)
        out = percentile_clip(vol, 5, 95)
        perm = [2, 0, 1]
        permuted = percentile_clip(_mm(vol.data[perm]), 5, 95)
        assert np.array_equal(permuted.data, out.data[perm])

    def test_all_zero_channel_warns(self):
        data = np.zeros((3, 4, 4, 4), dtype=np.float32)
        data[1:, 1:, :, :] = 3.0
        with pytest.warns(DegenerateChannelWarning):
            out = percentile_clip(_mm(data), 1, 99)
        assert np.array_equal(out.data[0], data[0])

    def test_bad_bounds_rejected(self, rng):
        vol = _random_vol(rng)
        with pytest.raises(ValueError):
            percentile_clip(vol, 50, 50)
        with pytest.raises(ValueError):
            percentile_clip(vol, -1, 99)


class TestNormalize:
    def test_affine_map_forced(self):
        data = np.zeros((3, 4, 4, 4), dtype=np.float32)
        data[:, 0, 0, 0] = 2.0
        data[:, 0, 0, 1] = 4.0
        data[:, 0, 0, 2] = 6.0
        out = normalize(_mm(data))
        assert np.allclose(sorted(out.data[0][out.data[0] != 0]), [0.5, 1.0])
        assert out.data[0, 0, 0, 0] == 0.0  # min maps to 0, joining background
        assert out.data[0, 0, 0, 1] == 0.5
        assert out.data[0, 0, 0, 2] == 1.0

    def test_output_range(self, rng):
        out = normalize(_random_vol(rng))
        assert out.data.min() >= 0.0
        assert out.data.max() <= 1.0

    def test_constant_channel_maps_to_zero(self):
        data = np.zeros((3, 4, 4, 4), dtype=np.float32)
        data[:, 1:, :, :] = 7.0
        with pytest.warns(DegenerateChannelWarning):
            out = normalize(_mm(data))
        assert np.all(out.data == 0)

    def test_background_stays_zero(self, rng):
        vol = _random_vol(rng)
        out = normalize(vol)
        assert np.all(out.data[vol.data == 0] == 0)

    def test_channels_independent(self, rng):
        vol = _random_vol(rng)
        out = normalize(vol)
        perm = [2, 0, 1]
        permuted = normalize(_mm(vol.data[perm]))
        assert np.array_equal(permuted.data, out.data[perm])

    def test_zscore_alternative(self, rng):
        vol = _random_vol(rng)
        out = normalize(vol, method="zscore")
        for c in range(3):
            vals = out.data[c][vol.data[c] != 0]
            assert abs(float(vals.mean())) < 1e-4
            assert abs(float(vals.std()) - 1.0) < 1e-3

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError, match="method"):
            normalize(_random_vol(rng), method="rank")


class TestCrop:
    def test_centered_on_foreground_oracle(self):
        mask = np.zeros((240, 240, 155), dtype=np.int16)
        mask[100:140, 60:100, 40:80] = 1
        spec = compute_crop(LabelMask(data=mask), target_dims=(128, 128, 128))
        # bounding-box midpoints: (119.5, 79.5, 59.5) -> start = round(mid - 64)
        assert spec.pad_before == (0, 0, 0) and spec.pad_after == (0, 0, 0)
        assert spec.start == (56, 16, 0)  # axis 2 clamps at 0: round(-4.5) < 0
        assert spec.dims == (128, 128, 128)

    def test_small_source_zero_padded(self):
        mask = np.zeros((100, 130, 96), dtype=np.int16)
        mask[40:60, 60:70, 40:50] = 2
        spec = compute_crop(LabelMask(data=mask), target_dims=(128, 128, 128))
        assert spec.pad_before == (14, 0, 16)
        assert spec.pad_after == (14, 0, 16)
        assert spec.start[0] == 0 and spec.start[2] == 0

    def test_corner_foreground_clamped(self):
        mask = np.zeros((60, 60, 60), dtype=np.int16)
        mask[:4, :4, :4] = 1
        spec = compute_crop(LabelMask(data=mask), target_dims=(32, 32, 32))
        assert spec.start == (0, 0, 0)
        mask2 = np.zeros((60, 60, 60), dtype=np.int16)
        mask2[-4:, -4:, -4:] = 1
        spec2 = compute_crop(LabelMask(data=mask2), target_dims=(32, 32, 32))
        assert spec2.start == (28, 28, 28)

    def test_volume_foreground_used_without_mask(self, phantom32):
        vol, _ = phantom32
        spec = compute_crop(vol, target_dims=(16, 16, 16))
        assert spec.dims == (16, 16, 16)
        cropped = apply_crop(vol, spec)
        assert cropped.data.shape == (3, 16, 16, 16)
        assert np.count_nonzero(cropped.data) > 0

    def test_identity_spec(self, phantom32):
        vol, _ = phantom32
        spec = CropSpec(start=(0, 0, 0), dims=vol.spatial_shape,
                        pad_before=(0, 0, 0), pad_after=(0, 0, 0),
                        source_dims=vol.spatial_shape)
        out = apply_crop(vol, spec)
        assert np.array_equal(out.data, vol.data)

    def test_crop_to_model_input_shape(self):
        vol = MultiModalVolume(data=np.ones((3, 240, 240, 155), dtype=np.float32))
        spec = compute_crop(vol)
        out = apply_crop(vol, spec)
        assert out.data.shape == (3, 128, 128, 128)

    def test_crop_restore_roundtrip(self, phantom32):
        _, mask = phantom32
        spec = compute_crop(mask, target_dims=(20, 20, 20))
        cropped = apply_crop(mask, spec)
        restored = restore_prediction(cropped, spec)
        assert restored.data.shape == mask.data.shape
        window = tuple(
            slice(max(0, s - b), max(0, s - b) + d)
            for s, b, d in zip(spec.start, spec.pad_before, spec.dims)
        )
        assert np.array_equal(
            apply_crop(restored, spec).data, cropped.data
        )
        outside = np.ones(mask.data.shape, dtype=bool)
        outside[window] = False
        assert np.all(restored.data[outside] == 0)

    def test_restore_roundtrip_with_padding(self):
        mask = np.zeros((20, 40, 40), dtype=np.int16)
        mask[5:15, 10:30, 10:30] = 3
        spec = compute_crop(LabelMask(data=mask), target_dims=(32, 32, 32))
        cropped = apply_crop(LabelMask(data=mask), spec)
        restored = restore_prediction(cropped, spec, original_dims=(20, 40, 40))
        assert restored.data.shape == (20, 40, 40)
        assert np.array_equal(restored.data == 3, mask == 3)

    def test_restore_dim_mismatch(self):
        spec = CropSpec(start=(0, 0, 0), dims=(8, 8, 8), pad_before=(0, 0, 0),
                        pad_after=(0, 0, 0), source_dims=(16, 16, 16))
        with pytest.raises(ValueError, match="dims"):
            restore_prediction(np.zeros((4, 4, 4), dtype=np.int16), spec)

    def test_apply_crop_wrong_source(self, phantom32):
        vol, _ = phantom32
        spec = CropSpec(start=(0, 0, 0), dims=(8, 8, 8), pad_before=(0, 0, 0),
                        pad_after=(0, 0, 0), source_dims=(16, 16, 16))
        with pytest.raises(ValueError, match="computed for dims"):
            apply_crop(vol, spec)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            CropSpec(start=(10, 0, 0), dims=(16, 16, 16), pad_before=(0, 0, 0),
                     pad_after=(0, 0, 0), source_dims=(16, 16, 16))


class TestOneHot:
    def test_all_zeros(self):
        onehot = one_hot_encode(np.zeros((4, 4, 4), dtype=np.int16))
        assert onehot.shape == (4, 4, 4, 4)
        assert np.all(onehot[0] == 1)
        assert np.all(onehot[1:] == 0)

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_decode_encode_identity(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.integers(0, 4, size=(5, 5, 5)).astype(np.int16)
        assert np.array_equal(one_hot_decode(one_hot_encode(mask)), mask)

    def test_onehot_sums_to_one(self, rng):
        mask = rng.integers(0, 4, size=(6, 6, 6)).astype(np.int16)
        onehot = one_hot_encode(mask)
        assert np.all(onehot.sum(axis=0) == 1)
        assert set(np.unique(onehot)) <= {0.0, 1.0}

    def test_soft_tie_breaks_low(self):
        soft = np.full((4, 2, 2, 2), 0.25, dtype=np.float32)
        assert np.all(one_hot_decode(soft) == 0)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="labels"):
            one_hot_encode(np.full((2, 2, 2), 4, dtype=np.int16))
