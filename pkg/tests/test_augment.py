import numpy as np
import pytest

from brainunet.augment import (
    AugmentConfig,
    apply_pipeline,
    ghosting_artifact,
    motion_artifact,
    random_flip,
    random_gamma,
    random_scale,
    _zoom_about_center,
)
from brainunet.phantom import generate_phantom


@pytest.fixture()
def case32():
    vol, mask = generate_phantom(seed=11, dims=(32, 32, 32))
    return vol.data, mask.data


class TestFlip:
    def test_double_flip_is_identity(self, case32):
        vol, mask = case32
        out_v, out_m = random_flip(vol, mask, np.random.default_rng(3))
        back_v, back_m = random_flip(out_v, out_m, np.random.default_rng(3))
        assert np.array_equal(back_v, vol)
        assert np.array_equal(back_m, mask)

    def test_label_counts_preserved(self, case32):
        vol, mask = case32
        _, out_m = random_flip(vol, mask, np.random.default_rng(0))
        for k in range(4):
            assert np.count_nonzero(out_m == k) == np.count_nonzero(mask == k)

    def test_deterministic_in_seed(self, case32):
        vol, mask = case32
        a = random_flip(vol, mask, np.random.default_rng(5))
        b = random_flip(vol, mask, np.random.default_rng(5))
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_volume_and_mask_share_axes(self, case32):
        vol, mask = case32
        mask_as_vol = np.stack([mask.astype(np.float32)] * 3)
        out_v, out_m = random_flip(mask_as_vol, mask, np.random.default_rng(8))
        assert np.array_equal(out_v[0].astype(np.int16), out_m)


class TestScale:
    def test_factor_one_is_identity(self, case32):
        vol, mask = case32
        out_v, out_m = random_scale(vol, mask, 1.0)
        assert np.allclose(out_v, vol, atol=1e-6)
        assert np.array_equal(out_m, mask)

    def test_labels_never_grow(self, case32):
        vol, mask = case32
        for factor in (0.85, 1.0, 1.15):
            _, out_m = random_scale(vol, mask, factor)
            assert set(np.unique(out_m)) <= set(np.unique(mask))

    def test_ball_volume_ratio_oracle(self):
        # zooming a centered ball by f multiplies its voxel count by ~f^3
        dims = (48, 48, 48)
        grid = np.ogrid[: dims[0], : dims[1], : dims[2]]
        ball = sum((g - 23.5) ** 2 for g in grid) <= 10.0 ** 2
        mask = ball.astype(np.int16)
        vol = np.stack([mask.astype(np.float32)] * 3)
        factor = 1.1
        _, out_m = random_scale(vol, mask, factor)
        ratio = np.count_nonzero(out_m) / np.count_nonzero(mask)
        assert abs(ratio - factor ** 3) / factor ** 3 < 0.10

    def test_mask_uses_same_geometry_kernel(self, case32):
        vol, mask = case32
        _, out_m = random_scale(vol, mask, 1.07)
        expected = _zoom_about_center(mask, 1.07, order=0).astype(mask.dtype)
        assert np.array_equal(out_m, expected)

    def test_bad_factor(self, case32):
        vol, mask = case32
        with pytest.raises(ValueError):
            random_scale(vol, mask, 0.0)


class TestGamma:
    def test_identity_and_fixed_points(self):
        vol = np.linspace(0, 1, 3 * 64, dtype=np.float32).reshape(3, 4, 4, 4)
        assert np.allclose(random_gamma(vol, 1.0), vol)
        out = random_gamma(vol, 2.7)
        assert out.flat[0] == 0.0
        assert abs(out.flat[-1] - 1.0) < 1e-6

    def test_quarter_squared(self):
        vol = np.full((3, 2, 2, 2), 0.25, dtype=np.float32)
        assert np.allclose(random_gamma(vol, 2.0), 0.0625)

    def test_range_contract(self):
        vol = np.full((3, 2, 2, 2), 1.5, dtype=np.float32)
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            random_gamma(vol, 2.0)


class TestMotion:
    def test_severity_zero_identity(self, case32):
        vol, _ = case32
        out = motion_artifact(vol, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, vol)

    def test_output_finite_same_dims(self, case32):
        vol, _ = case32
        out = motion_artifact(vol, 0.7, np.random.default_rng(0))
        assert out.shape == vol.shape
        assert np.all(np.isfinite(out))

    def test_full_severity_changes_volume(self, case32):
        vol, _ = case32
        out = motion_artifact(vol, 1.0, np.random.default_rng(0))
        assert np.mean(np.abs(out - vol)) > 0

    def test_deterministic(self, case32):
        vol, _ = case32
        a = motion_artifact(vol, 0.5, np.random.default_rng(4))
        b = motion_artifact(vol, 0.5, np.random.default_rng(4))
        assert np.array_equal(a, b)


class TestGhosting:
    def test_neutral_parameters_identity(self, case32):
        vol, _ = case32
        assert np.allclose(ghosting_artifact(vol, 0.0, 4, axis=0), vol, atol=1e-6)
        assert np.allclose(ghosting_artifact(vol, 0.5, 0, axis=0), vol, atol=1e-6)

    @pytest.mark.parametrize("num_ghosts,intensity", [(4, 0.6), (2, 0.4), (8, 0.5)])
    def test_replica_period_autocorrelation_oracle(self, case32, num_ghosts, intensity):
        # attenuating every k-th k-space line along an axis of length 32
        # must create replicas every 32/k voxels: the difference image's
        # autocorrelation has sharp local peaks at every multiple of that
        # period (the magnitude step also adds a smooth envelope, so the
        # peaks are local maxima rather than the global argmax)
        vol, _ = case32
        axis, length = 0, 32
        out = ghosting_artifact(vol, intensity, num_ghosts, axis=axis)
        diff = (out - vol)[0]
        spectrum_power = np.abs(np.fft.fft(diff, axis=axis)) ** 2
        autocorr = np.real(np.fft.ifft(spectrum_power, axis=axis)).sum(axis=(1, 2))
        period = length // num_ghosts
        for m in range(1, num_ghosts):
            lag = m * period
            assert autocorr[lag] > autocorr[lag - 1], (num_ghosts, lag)
            assert autocorr[lag] > autocorr[(lag + 1) % length], (num_ghosts, lag)
        assert autocorr[period] > 0.2 * autocorr[0]

    def test_axis_drawn_from_rng_when_unset(self, case32):
        vol, _ = case32
        a = ghosting_artifact(vol, 0.5, 4, axis=None, rng=np.random.default_rng(2))
        b = ghosting_artifact(vol, 0.5, 4, axis=None, rng=np.random.default_rng(2))
        assert np.array_equal(a, b)
        with pytest.raises(ValueError, match="axis or an rng"):
            ghosting_artifact(vol, 0.5, 4)


class TestPipeline:
    def test_zero_probability_is_identity(self, case32):
        vol, mask = case32
        cfg = AugmentConfig(flip_prob=0, scale_prob=0, gamma_prob=0,
                            motion_prob=0, ghosting_prob=0)
        out_v, out_m = apply_pipeline(vol, mask, cfg, np.random.default_rng(0))
        assert np.array_equal(out_v, vol) and out_v is not vol
        assert np.array_equal(out_m, mask) and out_m is not mask

    def test_same_seed_same_output(self, case32):
        vol, mask = case32
        cfg = AugmentConfig()
        a = apply_pipeline(vol, mask, cfg, np.random.default_rng(42))
        b = apply_pipeline(vol, mask, cfg, np.random.default_rng(42))
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_flip_only_equals_direct_call(self, case32):
        vol, mask = case32
        cfg = AugmentConfig(flip_prob=1, scale_prob=0, gamma_prob=0,
                            motion_prob=0, ghosting_prob=0)
        out_v, out_m = apply_pipeline(vol, mask, cfg, np.random.default_rng(9))
        rng = np.random.default_rng(9)
        rng.random(5)  # the pipeline's gate draws come first
        exp_v, exp_m = random_flip(vol, mask, rng)
        assert np.array_equal(out_v, exp_v)
        assert np.array_equal(out_m, exp_m)

    @pytest.mark.parametrize("seed", range(6))
    def test_mask_labels_never_grow(self, case32, seed):
        vol, mask = case32
        cfg = AugmentConfig()
        _, out_m = apply_pipeline(vol, mask, cfg, np.random.default_rng(seed))
        assert set(np.unique(out_m)) <= set(np.unique(mask))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_prob=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(scale_range=(0.0, 1.1))
        with pytest.raises(ValueError):
            AugmentConfig(gamma_range=(1.2, 0.8))
        with pytest.raises(ValueError):
            AugmentConfig(ghosting_num_ghosts=-1)

    def test_config_dict_roundtrip(self):
        cfg = AugmentConfig(scale_range=(0.8, 1.2), seed=5)
        assert AugmentConfig.from_dict(cfg.to_dict()) == cfg
