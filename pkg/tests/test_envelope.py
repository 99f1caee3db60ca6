import numpy as np
import pytest

from envtrack.envelope import (
    AudioRateError,
    EnvelopeSeries,
    envelope_from_wav,
    extract_broadband_envelope,
    segment_envelope,
)
from envtrack.schemas import EnvelopeConfig
from envtrack.sigcore import DegenerateSignalError, Signal

# 8 полос вместо 128: те же свойства, но тест идёт секунды
FAST = EnvelopeConfig(n_bands=8)


class TestExtractBroadbandEnvelope:
    def test_thirty_seconds_give_1920_samples(self, am_tone):
        env = extract_broadband_envelope(am_tone(1000.0, 4.0, 30.0, 16000.0), FAST)
        assert len(env) == 1920
        assert env.rate == 64

    def test_spectral_peak_at_modulator(self, am_tone):
        env = extract_broadband_envelope(am_tone(1000.0, 4.0, 10.0, 16000.0), FAST)
        samples = env.samples - env.samples.mean()
        spectrum = np.abs(np.fft.rfft(samples))
        freqs = np.fft.rfftfreq(samples.size, 1 / env.rate)
        band = freqs >= 0.5
        peak = freqs[band][np.argmax(spectrum[band])]
        assert peak == pytest.approx(4.0, abs=0.1)

    @pytest.mark.parametrize('gain', [0.5, 2.0, 10.0])
    def test_gain_invariance(self, am_tone, gain):
        audio = am_tone(1000.0, 4.0, 2.0, 16000.0)
        scaled = Signal(gain * audio.samples, audio.rate)
        base = extract_broadband_envelope(audio, FAST)
        out = extract_broadband_envelope(scaled, FAST)
        assert np.array_equal(out.samples, base.samples)

    def test_threads_do_not_change_output(self, am_tone):
        audio = am_tone(1000.0, 4.0, 2.0, 16000.0)
        one = extract_broadband_envelope(audio, FAST, threads=1)
        many = extract_broadband_envelope(audio, FAST, threads=3)
        assert np.array_equal(one.samples, many.samples)

    def test_low_rate_rejected(self, am_tone):
        with pytest.raises(AudioRateError):
            extract_broadband_envelope(am_tone(1000.0, 4.0, 1.0, 8000.0), FAST)

    def test_silence_is_degenerate(self):
        with pytest.raises(DegenerateSignalError):
            extract_broadband_envelope(Signal(np.zeros(16000), 16000.0), FAST)


def test_envelope_from_wav(write_wav, am_tone):
    path = write_wav('speaker01.wav', am_tone(1000.0, 4.0, 2.0, 16000.0))
    env = envelope_from_wav(path, FAST)
    assert env.source_id == 'speaker01'
    assert len(env) == 128


class TestSegmentEnvelope:
    def test_whole_epochs(self):
        env = EnvelopeSeries(np.arange(70 * 64, dtype=float), 64, 'rec')
        parts = segment_envelope(env)
        assert [len(p) for p in parts] == [1920, 1920]
        assert [p.source_id for p in parts] == ['rec#0', 'rec#1']
        assert parts[1].samples[0] == 1920

    def test_short_recording_warns(self, mocker):
        mock_logger = mocker.patch('envtrack.envelope.logger')
        env = EnvelopeSeries(np.zeros(64 * 10), 64, 'short')
        assert segment_envelope(env) == []
        mock_logger.warning.assert_called_once()
