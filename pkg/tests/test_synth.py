import numpy as np
import pytest
from pydantic import ValidationError

from tensor_denoise.exceptions import DataValidationError
from tensor_denoise.models import ReflectorSpec, SynthSettings, WaveletSpec
from tensor_denoise.pipeline import snr_db
from tensor_denoise.synth import benchmark_volumes, make_model, reflector_depths, ricker


def flat(depth, amplitude=1.0):
    return ReflectorSpec(depth=depth, amplitude=amplitude)


class TestRicker:
    """Test the source pulse"""

    def test_peak_and_symmetry(self, small_wavelet):
        w = ricker(small_wavelet)
        assert len(w) == 2 * small_wavelet.half_length + 1
        assert np.argmax(w) == small_wavelet.half_length
        assert w[small_wavelet.half_length] == 1.0
        np.testing.assert_allclose(w, w[::-1], atol=1e-15)

    def test_spectral_peak_at_central_frequency(self):
        spec = WaveletSpec(central_frequency=60.0, sample_interval=0.001, half_length=128)
        w = ricker(spec)
        freqs = np.fft.rfftfreq(len(w), d=spec.sample_interval)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(w)))]
        assert abs(peak - 60.0) <= freqs[1]

    def test_zero_mean(self):
        w = ricker(WaveletSpec(half_length=128))
        assert abs(np.sum(w)) <= 1e-6 * np.sum(np.abs(w))

    def test_nyquist(self):
        with pytest.raises(ValidationError):
            WaveletSpec(central_frequency=500.0, sample_interval=0.001)
        with pytest.raises(DataValidationError) as exc:
            ricker(WaveletSpec.model_construct(central_frequency=600.0, sample_interval=0.001, half_length=8))
        assert exc.value.error_code == "NYQUIST_VIOLATION"

    def test_benchmark_settings_check_nyquist(self):
        with pytest.raises(ValidationError):
            SynthSettings(central_frequency=250.0, sample_interval=0.002)


class TestMakeModel:
    """Test the reflectivity model"""

    def test_zero_reflectors(self, small_wavelet):
        V = make_model((32, 3, 3), 1.0, [], small_wavelet)
        assert not np.any(V.data)
        assert V.sample_interval == small_wavelet.sample_interval

    def test_flat_reflector_traces_equal_the_wavelet(self, small_wavelet):
        V = make_model((64, 3, 2), 1.0, [flat(20.0)], small_wavelet)
        h = small_wavelet.half_length
        w = ricker(small_wavelet)
        for i2 in range(3):
            for i3 in range(2):
                np.testing.assert_allclose(V.data[:, i2, i3], V.data[:, 0, 0], atol=1e-14)
        np.testing.assert_allclose(V.data[20 - h:20 + h + 1, 0, 0], w, atol=1e-12)

    def test_event_follows_plane_equation(self, small_wavelet):
        reflector = ReflectorSpec(depth=10.0, dip_inline=1.0, dip_crossline=2.0)
        V = make_model((64, 5, 5), 1.0, [reflector], small_wavelet)
        expected = reflector_depths(reflector, (5, 5), 1.0)
        np.testing.assert_array_equal(np.argmax(V.data, axis=0), expected.astype(int))

    def test_depth_interval_scales_depths(self):
        depths = reflector_depths(ReflectorSpec(depth=40.0, dip_inline=4.0), (3, 1), 2.0)
        np.testing.assert_allclose(depths[:, 0], [20.0, 22.0, 24.0])

    def test_fractional_depth_splits_the_spike(self, small_wavelet):
        between = make_model((64, 2, 2), 1.0, [flat(20.25)], small_wavelet)
        upper = make_model((64, 2, 2), 1.0, [flat(20.0)], small_wavelet)
        lower = make_model((64, 2, 2), 1.0, [flat(21.0)], small_wavelet)
        np.testing.assert_allclose(between.data, 0.75 * upper.data + 0.25 * lower.data, atol=1e-12)

    def test_linear_in_reflectors(self, small_wavelet, small_reflectors):
        both = make_model((48, 8, 8), 1.0, small_reflectors, small_wavelet)
        parts = [make_model((48, 8, 8), 1.0, [r], small_wavelet) for r in small_reflectors]
        np.testing.assert_allclose(both.data, parts[0].data + parts[1].data, atol=1e-12)
        doubled = [r.model_copy(update={"amplitude": 2.0 * r.amplitude}) for r in small_reflectors]
        np.testing.assert_allclose(
            make_model((48, 8, 8), 1.0, doubled, small_wavelet).data, 2.0 * both.data, atol=1e-12
        )

    def test_reflector_outside_volume(self, small_wavelet):
        with pytest.raises(DataValidationError) as exc:
            make_model((32, 4, 4), 1.0, [flat(500.0)], small_wavelet)
        assert exc.value.error_code == "REFLECTOR_OUTSIDE"

    def test_partially_outside_is_kept(self, small_wavelet):
        steep = ReflectorSpec(depth=28.0, dip_inline=2.0)
        V = make_model((32, 4, 1), 1.0, [steep], small_wavelet)
        assert np.any(V.data[:, 0, 0])


class TestBenchmark:
    """Test the synthetic benchmark pair"""

    @pytest.fixture(scope="class")
    def benchmark(self):
        return benchmark_volumes(seed=0)

    def test_input_snr(self, benchmark):
        clean, noisy = benchmark
        assert clean.dims == (1200, 32, 32)
        assert snr_db(clean, noisy) == pytest.approx(0.14, abs=0.01)

    def test_deterministic_in_seed(self, benchmark):
        clean, noisy = benchmark
        again_clean, again_noisy = benchmark_volumes(seed=0)
        assert np.array_equal(clean.data, again_clean.data)
        assert np.array_equal(noisy.data, again_noisy.data)
        assert not np.array_equal(noisy.data, benchmark_volumes(seed=1)[1].data)

    def test_energy_sits_on_the_reflectors(self, benchmark):
        """Test that 99% of the clean energy lies within 40 samples of a reflector"""
        clean, _ = benchmark
        settings = SynthSettings()
        n1, n2, n3 = clean.dims
        mask = np.zeros(clean.dims, dtype=bool)
        samples = np.arange(n1)[:, None, None]
        for reflector in settings.reflectors:
            z = reflector_depths(reflector, (n2, n3), settings.depth_interval)
            mask |= np.abs(samples - z[None, :, :]) <= 40
        energy = clean.data ** 2
        assert energy[mask].sum() >= 0.99 * energy.sum()

    def test_custom_settings(self, small_reflectors):
        settings = SynthSettings(dims=(48, 8, 8), half_length=16, reflectors=small_reflectors, target_snr_db=5.0)
        clean, noisy = benchmark_volumes(seed=3, settings=settings)
        assert clean.dims == (48, 8, 8)
        assert snr_db(clean, noisy) == pytest.approx(5.0, abs=0.01)
