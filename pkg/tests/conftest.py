import numpy as np
import pytest
from scipy.io import wavfile

from envtrack.sigcore import Signal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_tone(freq_hz: float, duration_s: float, rate: float, amplitude=1.0):
    t = np.arange(int(round(duration_s * rate))) / rate
    return Signal(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


def make_am_tone(
    carrier_hz: float, modulator_hz: float, duration_s: float, rate: float
) -> Signal:
    t = np.arange(int(round(duration_s * rate))) / rate
    envelope = 1 + 0.8 * np.sin(2 * np.pi * modulator_hz * t)
    return Signal(0.5 * envelope * np.sin(2 * np.pi * carrier_hz * t), rate)


@pytest.fixture
def tone():
    return make_tone


@pytest.fixture
def am_tone():
    return make_am_tone


@pytest.fixture
def write_wav(tmp_path):
    """Записать float-сигнал в 16-битный WAV во временном каталоге."""

    def _write(name: str, signal: Signal):
        path = tmp_path / name
        pcm = np.clip(signal.samples, -1, 1 - 2**-15) * 32768
        wavfile.write(path, int(signal.rate), pcm.astype(np.int16))
        return path

    return _write
