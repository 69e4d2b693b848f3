import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepyco.augment import (
    apply_pipeline,
    band_stop,
    make_view_pair,
    multiview_batch,
    time_shift,
    zero_mask,
)
from sleepyco.config import AugmentationConfig, ConfigError, TransformRange

FS = 100
T = np.arange(3000) / FS


def only(name, **range_kwargs):
    """Config with a single transform active (probability 1)."""
    cfg = AugmentationConfig().disabled()
    current = getattr(cfg, name)
    setattr(cfg, name, dataclasses.replace(current, prob=1.0, **range_kwargs))
    return cfg


def tone_gain_db(freq, lower):
    x = np.sin(2 * np.pi * freq * T)
    y = band_stop(x, lower)
    core = slice(500, 2500)  # away from filtfilt edge transients
    return 20 * np.log10(np.sqrt(np.mean(y[core] ** 2)) / np.sqrt(np.mean(x[core] ** 2)))


class TestPipeline:
    def test_all_disabled_is_identity(self, rng):
        x = rng.standard_normal(3000)
        out = apply_pipeline(x, AugmentationConfig().disabled(), np.random.default_rng(0))
        assert out.tobytes() == x.tobytes()

    def test_scaling_forced_to_two(self, rng):
        x = rng.standard_normal(3000)
        out = apply_pipeline(x, only("amplitude_scale", min=2.0, max=2.0), rng)
        np.testing.assert_array_equal(out, 2 * x)

    def test_shift_forced_to_300(self, rng):
        x = rng.standard_normal(3000)
        out = apply_pipeline(x, only("time_shift", min=300, max=300), rng)
        np.testing.assert_array_equal(out[300:], x[:-300])
        np.testing.assert_array_equal(out[:300], 0.0)

    def test_negative_shift(self, rng):
        x = rng.standard_normal(3000)
        out = time_shift(x, -5)
        np.testing.assert_array_equal(out[:-5], x[5:])
        np.testing.assert_array_equal(out[-5:], 0.0)
        assert time_shift(x, 0).tobytes() == x.tobytes()

    def test_amplitude_shift(self, rng):
        x = rng.standard_normal(3000)
        out = apply_pipeline(x, only("amplitude_shift", min=-3.0, max=-3.0), rng)
        np.testing.assert_allclose(out, x - 3.0)

    def test_noise_level(self, rng):
        x = np.zeros(3000)
        out = apply_pipeline(x, only("gaussian_noise", min=0.2, max=0.2), rng)
        assert 0.18 < out.std() < 0.22

    def test_wrong_length(self, rng):
        with pytest.raises(ValueError, match="3000"):
            apply_pipeline(np.zeros(2999), AugmentationConfig(), rng)

    def test_deterministic_stream(self, rng):
        x = rng.standard_normal(3000)
        a = apply_pipeline(x, AugmentationConfig(), np.random.default_rng([1, 2, 0]))
        b = apply_pipeline(x, AugmentationConfig(), np.random.default_rng([1, 2, 0]))
        assert a.tobytes() == b.tobytes()

    def test_transforms_fire_about_half_the_time(self, rng):
        x = rng.standard_normal(3000) + 5.0
        cfg = only("amplitude_shift", min=100.0, max=100.0)
        cfg.amplitude_shift = dataclasses.replace(cfg.amplitude_shift, prob=0.5)
        fired = sum(apply_pipeline(x, cfg, np.random.default_rng(i)).mean() > 50 for i in range(400))
        assert 160 < fired < 240

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_length_preserved_with_defaults(self, seed):
        r = np.random.default_rng(seed)
        out = apply_pipeline(r.standard_normal(3000), AugmentationConfig(), r)
        assert out.shape == (3000,) and np.isfinite(out).all()


class TestZeroMask:
    @given(st.integers(0, 3000), st.integers(0, 300))
    def test_single_contiguous_run(self, start, length):
        x = np.arange(1.0, 3001.0)
        out = zero_mask(x, start, length)
        zeros = np.flatnonzero(out == 0)
        expected = np.arange(start, min(start + length, 3000))
        np.testing.assert_array_equal(zeros, expected)
        keep = np.ones(3000, bool)
        keep[expected] = False
        assert out[keep].tobytes() == x[keep].tobytes()

    def test_sampled_mask_in_pipeline(self, rng):
        x = np.arange(1.0, 3001.0)
        out = apply_pipeline(x, only("zero_mask", min=100, max=100), rng)
        zeros = np.flatnonzero(out == 0)
        assert zeros.size == 100 and np.all(np.diff(zeros) == 1)


class TestBandStop:
    def test_centre_attenuated(self):
        assert tone_gain_db(10.0, 9.0) <= -20

    def test_far_tone_untouched(self):
        assert abs(tone_gain_db(30.0, 9.0)) <= 1

    @pytest.mark.parametrize("lower", [0.5, 5.0, 12.0, 20.0, 30.0])
    def test_edges_plus_three_hz(self, lower):
        assert tone_gain_db(lower + 1.0, lower) <= -20
        assert abs(tone_gain_db(lower + 2.0 + 3.0, lower)) <= 1
        if lower - 3.0 > 0:
            assert abs(tone_gain_db(lower - 3.0, lower)) <= 1

    def test_zero_signal(self):
        np.testing.assert_array_equal(band_stop(np.zeros(3000), 5.0), 0.0)

    def test_zero_phase(self):
        x = np.sin(2 * np.pi * 25 * T)
        y = band_stop(x, 5.0)
        lag = np.argmax(np.correlate(y[500:2500], x[500:2500], "full")) - 1999
        assert lag == 0

    @pytest.mark.parametrize("lower", [0.0, -1.0, 48.0, 49.5])
    def test_band_outside_nyquist(self, lower):
        with pytest.raises(ValueError):
            band_stop(np.zeros(3000), lower)


class TestViews:
    def test_pair_shares_label_and_source(self, rng):
        x = rng.standard_normal(3000)
        pair = make_view_pair(x, 3, AugmentationConfig(), seed=0, sample_index=7)
        assert pair.label == 3
        assert pair.view_a.shape == pair.view_b.shape == (3000,)
        assert pair.view_a.tobytes() != pair.view_b.tobytes()
        same = make_view_pair(x, 3, AugmentationConfig().disabled(), 0, 7)
        assert same.view_a.tobytes() == same.view_b.tobytes() == x.tobytes()

    def test_batch_interleaves_and_is_schedule_independent(self, rng):
        epochs = rng.standard_normal((4, 3000))
        labels = np.array([0, 2, 4, 1])
        views, vl = multiview_batch(epochs, labels, AugmentationConfig(), 9, [10, 11, 12, 13])
        assert views.shape == (8, 3000)
        np.testing.assert_array_equal(vl, [0, 0, 2, 2, 4, 4, 1, 1])
        # one sample alone reproduces its slot in the batch
        solo, _ = multiview_batch(epochs[2:3], labels[2:3], AugmentationConfig(), 9, [12])
        assert solo.tobytes() == views[4:6].tobytes()


class TestConfig:
    def test_defaults(self):
        cfg = AugmentationConfig()
        assert (cfg.amplitude_scale.min, cfg.amplitude_scale.max) == (0.5, 2.0)
        assert (cfg.time_shift.min, cfg.time_shift.max) == (-300, 300)
        assert (cfg.amplitude_shift.min, cfg.amplitude_shift.max) == (-10.0, 10.0)
        assert (cfg.zero_mask.min, cfg.zero_mask.max) == (0, 300)
        assert (cfg.gaussian_noise.min, cfg.gaussian_noise.max) == (0.0, 0.2)
        assert (cfg.band_stop.min, cfg.band_stop.max) == (0.5, 30.0)
        assert cfg.band_stop_width == 2.0
        probs = [getattr(cfg, f.name).prob for f in dataclasses.fields(cfg) if f.name != "band_stop_width"]
        assert probs == [0.5] * 6

    def test_invalid_ranges(self):
        with pytest.raises(ConfigError):
            TransformRange(2.0, 1.0).validate("x")
        with pytest.raises(ConfigError):
            TransformRange(0.0, 1.0, 1.5).validate("x")
