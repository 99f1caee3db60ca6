import numpy as np
import pandas as pd
import pytest
from scipy.signal import sawtooth

from envtrack.constants import FEATURE_ORDER
from envtrack.features import (
    PowerSpectrum,
    band_periodic_power,
    build_profiles,
    extract_glottal_cycles,
    fit_fractal,
    harmonicity,
    intensity_contour,
    jitter_metrics,
    lip_features,
    min_intensity,
    multitaper_psd,
    periodic_fraction,
    pitch_statistics,
    pitch_track,
    segment_features,
    shimmer_metrics,
)
from envtrack.features.profiles import (
    ProfileInputError,
    normalize_features,
    prune_correlated,
    split_segments,
)
from envtrack.features.spectral import (
    NonPositivePowerError,
    SegmentTooShortError,
    n_tapers,
)
from envtrack.features.visual import RoiError
from envtrack.features.voice import (
    AudioTooShortError,
    NonPositiveAmplitudeError,
    TooFewPeriodsError,
    UnvoicedAudioError,
)
from envtrack.schemas import LipRoi
from envtrack.sigcore import Signal


def _voice(f0_hz=150.0, duration_s=1.0, rate=16000.0, rng=None):
    t = np.arange(int(duration_s * rate)) / rate
    wave = 0.5 * sawtooth(2 * np.pi * f0_hz * t)
    if rng is not None:
        wave += 0.005 * rng.standard_normal(t.size)
    return Signal(wave, rate)


def _power_law(freqs, alpha=1.5, offset=2.0):
    return 10 ** (offset - alpha * np.log10(freqs))


class TestMultitaper:
    def test_taper_count(self):
        assert n_tapers(30.0, 0.5) == 29
        assert n_tapers(8.0, 0.5) == 7

    def test_power_sums_to_variance(self, rng):
        noise = Signal(rng.standard_normal(8000), 1000.0)
        psd = multitaper_psd(noise, freq_range=(0.0, 500.0))
        df = psd.freqs_hz[1] - psd.freqs_hz[0]
        assert np.sum(psd.power) * df == pytest.approx(noise.samples.var(), rel=0.05)
        assert psd.n_tapers == 7

    def test_tone_peak(self, tone):
        psd = multitaper_psd(tone(50.0, 8.0, 1000.0))
        assert psd.freqs_hz[np.argmax(psd.power)] == pytest.approx(50.0, abs=0.5)
        assert psd.freqs_hz.min() >= 0.3

    def test_too_short(self, tone):
        with pytest.raises(SegmentTooShortError):
            multitaper_psd(tone(50.0, 1.0, 1000.0))


class TestFractal:
    def test_recovers_exponent_despite_peaks(self):
        freqs = np.arange(1.0, 101.0)
        power = _power_law(freqs)
        power[9:12] *= 20
        fit = fit_fractal(PowerSpectrum(freqs, power, 7, 0.5))
        assert fit.alpha == pytest.approx(1.5, abs=1e-3)
        assert fit.offset == pytest.approx(2.0, abs=1e-3)

    def test_pure_power_law_has_no_periodic_part(self):
        freqs = np.arange(0.5, 200.0, 0.5)
        ratio = periodic_fraction(PowerSpectrum(freqs, _power_law(freqs), 7, 0.5))
        np.testing.assert_allclose(ratio.power, 1.0, atol=1e-6)
        bands = band_periodic_power(ratio, 30.0)
        assert all(value == pytest.approx(0.0, abs=1e-6) for value in bands.values())

    def test_non_positive_power(self):
        freqs = np.arange(1.0, 5.0)
        with pytest.raises(NonPositivePowerError):
            fit_fractal(PowerSpectrum(freqs, np.array([1.0, 0.0, 1.0, 1.0]), 1, 0.5))


def test_band_periodic_power_edges():
    ratio = PowerSpectrum(
        np.array([1.0, 30.0, 299.0, 300.0, 4500.0]),
        np.array([3.0, 2.0, 1.5, 0.5, 2.0]),
        7,
        0.5,
    )
    assert band_periodic_power(ratio, 2.0) == {
        'FreqRsum_env': 1.0,
        'FreqRsum_low': 0.75,
        'FreqRsum_mid': 0.0,
        'FreqRsum_high': 0.5,
    }


class TestPitch:
    @pytest.mark.parametrize('f0', [110.0, 150.0, 220.0])
    def test_sawtooth(self, f0):
        track = pitch_track(_voice(f0))
        stats = pitch_statistics(track)
        assert stats['medianPitch'] == pytest.approx(f0, abs=1.0)
        assert track.voiced.mean() > 0.9

    def test_sine(self, tone):
        stats = pitch_statistics(pitch_track(tone(200.0, 0.5, 16000.0)))
        assert stats['meanPitch'] == pytest.approx(200.0, abs=1.0)

    def test_silence_is_unvoiced(self):
        track = pitch_track(Signal(np.zeros(16000), 16000.0))
        assert track.is_unvoiced
        assert pitch_statistics(track) is None
        with pytest.raises(UnvoicedAudioError):
            harmonicity(track)

    def test_too_short(self):
        with pytest.raises(AudioTooShortError):
            pitch_track(Signal(np.ones(800), 16000.0))

    def test_harmonicity_of_clean_voice_is_small(self):
        assert 0 <= harmonicity(pitch_track(_voice())) < 0.1


class TestGlottalCycles:
    def test_periods_follow_f0(self):
        audio = _voice(150.0)
        cycles = extract_glottal_cycles(audio, pitch_track(audio))
        assert cycles.periods_s.size > 100
        assert np.median(cycles.periods_s) == pytest.approx(1 / 150, rel=0.01)
        assert np.all(cycles.amplitudes > 0)


class TestJitter:
    def test_hand_values(self):
        periods = [0.010, 0.011, 0.010, 0.011, 0.010]
        mean = 0.0104
        result = jitter_metrics(periods)
        assert result['jitter_loc_abs'] == pytest.approx(0.001)
        assert result['jitter_loc'] == pytest.approx(0.001 / mean)
        assert result['jitter_rap'] == pytest.approx((0.002 / 3) / mean)
        assert result['jitter_ppq5'] == pytest.approx(0.0004 / mean)

    def test_ppq5_needs_five_periods(self):
        assert np.isnan(jitter_metrics([0.01, 0.011, 0.01, 0.011])['jitter_ppq5'])

    def test_too_few(self):
        with pytest.raises(TooFewPeriodsError):
            jitter_metrics([0.01, 0.011])


class TestShimmer:
    def test_hand_values(self):
        result = shimmer_metrics([1.0, 2.0, 1.0, 2.0])
        assert result['shimmer_loc'] == pytest.approx(1 / 1.5)
        assert result['shimmer_loc_dB'] == pytest.approx(20 * np.log10(2))
        assert result['shimmer_apq3'] == pytest.approx((2 / 3) / 1.5)
        assert np.isnan(result['shimmer_apq5'])
        assert np.isnan(result['shimmer_apq11'])

    def test_non_positive(self):
        with pytest.raises(NonPositiveAmplitudeError):
            shimmer_metrics([1.0, 0.0, 1.0])


class TestIntensity:
    def test_sine_level(self, tone):
        # средний квадрат 0.5 относительно (20 мкПа)² ≈ 91 дБ
        level = min_intensity(tone(200.0, 1.0, 16000.0))
        assert level == pytest.approx(90.97, abs=0.5)

    def test_silence_hits_floor(self):
        _, levels = intensity_contour(Signal(np.zeros(1600), 16000.0))
        np.testing.assert_allclose(levels, 10 * np.log10(1e-20 / 4e-10))


class TestLips:
    def test_dark_band(self):
        frames = np.ones((2, 10, 10))
        frames[:, 4:7, :] = 0.0
        result = lip_features(frames, LipRoi(x=0, y=0, width=10, height=10))
        assert result['avgLipOpen'] == pytest.approx(0.3)
        assert result['avgLipBright'] == pytest.approx(0.7)

    def test_roi_outside_frame(self):
        with pytest.raises(RoiError, match='выходит за кадр'):
            lip_features(np.ones((1, 10, 10)), LipRoi(x=5, y=0, width=10, height=5))


class TestSegmentFeatures:
    def test_voiced_segment(self, rng):
        features = segment_features(_voice(150.0, 4.0, rng=rng))
        assert tuple(features) == FEATURE_ORDER
        assert features['medianPitch'] == pytest.approx(150.0, abs=1.0)
        assert np.isfinite(features['jitter_loc'])
        assert np.isfinite(features['shimmer_apq11'])
        assert np.isnan(features['avgLipOpen'])

    def test_unvoiced_segment(self, rng, mocker):
        mock_logger = mocker.patch('envtrack.features.profiles.logger')
        # тихий шум и один щелчок: кадры шума ниже порога тишины
        samples = 1e-3 * rng.standard_normal(4 * 16000)
        samples[32000] = 1.0
        features = segment_features(Signal(samples, 16000.0), label='click')
        assert np.isnan(features['meanPitch'])
        assert np.isnan(features['shimmer_loc'])
        assert np.isfinite(features['min_intensity'])
        mock_logger.warning.assert_called_once()

    def test_split_segments(self):
        audio = Signal(np.zeros(65 * 100), 100.0)
        frames = np.zeros((65 * 25, 2, 2))
        segments = split_segments(audio, frames, 30.0)
        assert len(segments) == 2
        assert [len(chunk) for chunk, _ in segments] == [3000, 3000]
        assert [video.shape[0] for _, video in segments] == [750, 750]


class TestProfiles:
    def test_normalize(self):
        means = pd.DataFrame(
            {'a': [1.0, 2.0, 3.0], 'b': [5.0, 5.0, 5.0], 'c': [1.0, np.nan, 2.0]},
            index=['SP1', 'SP2', 'SP3'],
        )
        normalized, dropped = normalize_features(means)
        assert normalized['a'].tolist() == [0.0, 0.5, 1.0]
        assert dropped == {'b': 'constant', 'c': 'incomplete'}

    def test_prune_keeps_first_declared(self):
        frame = pd.DataFrame(
            {'x': [0.0, 0.5, 1.0], 'y': [0.0, 0.6, 1.0], 'z': [1.0, 0.0, 0.5]}
        )
        pruned, dropped = prune_correlated(frame, 0.8)
        assert pruned.columns.tolist() == ['x', 'z']
        assert list(dropped) == ['y']

    def test_build_from_segments(self):
        segments = pd.DataFrame(
            {
                'speaker_id': ['SP1', 'SP1', 'SP2', 'SP2', 'SP3', 'SP3'],
                'segment': [0, 1, 0, 1, 0, 1],
                'meanPitch': [100.0, 120.0, 200.0, 220.0, 150.0, 150.0],
                'min_intensity': [40.0, 40.0, 40.0, 40.0, 40.0, 40.0],
            }
        )
        profiles = build_profiles(segments)
        assert profiles.means.loc['SP1', 'meanPitch'] == 110.0
        assert profiles.retained == ['meanPitch']
        assert profiles.dropped == {'min_intensity': 'constant'}
        assert profiles.normalized['meanPitch'].tolist() == [0.0, 1.0, 0.4]
        radar = profiles.radar_frame()
        assert radar.columns.tolist() == ['feature', 'speaker_id', 'value']
        assert len(radar) == 3

    def test_needs_two_speakers(self):
        segments = pd.DataFrame({'speaker_id': ['SP1'], 'meanPitch': [100.0]})
        with pytest.raises(ProfileInputError, match='2 дикторов'):
            build_profiles(segments)
