"""Широкополосная огибающая речи.

z-нормировка → гамматон-банк (128 полос, 100–6500 Гц) → модуль аналитического
сигнала в каждой полосе → среднее по полосам → НЧ Баттерворт 30 Гц → 64 Гц.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from envtrack.constants import EPOCH_S
from envtrack.exceptions import InputValidationError
from envtrack.formats import read_wav
from envtrack.logging import logger
from envtrack.schemas import EnvelopeConfig
from envtrack.sigcore import (
    Signal,
    design_butterworth,
    design_gammatone_bank,
    gammatone_band,
    iir_filter_array,
    resample_array,
    zscore_array,
)
from envtrack.utils import parallel_map, resolve_threads


class AudioRateError(InputValidationError):
    pass


@dataclass(frozen=True, eq=False)
class EnvelopeSeries:
    samples: np.ndarray
    rate: float
    source_id: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'samples', np.asarray(self.samples, dtype=float))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate

    def as_signal(self) -> Signal:
        return Signal(self.samples, self.rate)


def band_average_envelope(
    samples: np.ndarray,
    rate: float,
    config: EnvelopeConfig,
    threads: int | None = None,
) -> np.ndarray:
    """Среднее модулей Гильберта по полосам гамматон-банка.

    Полосы считаются пачками по числу потоков, а суммируются строго по
    порядку полос: результат побитово одинаков при любом `threads`, и в памяти
    одновременно живёт только одна пачка полос.
    """
    bank = design_gammatone_bank(config.n_bands, config.fmin_hz, config.fmax_hz)
    poles, gains = bank.coefficients(rate)
    chunk = resolve_threads(threads)

    def band_magnitude(band: int) -> np.ndarray:
        out = gammatone_band(samples, poles[band], gains[band], bank.order)
        return np.abs(sps.hilbert(out))

    total = np.zeros_like(samples)
    for start in range(0, bank.n_bands, chunk):
        bands = range(start, min(start + chunk, bank.n_bands))
        for magnitude in parallel_map(band_magnitude, bands, threads):
            total += magnitude
    return total / bank.n_bands


def extract_broadband_envelope(
    audio: Signal,
    config: EnvelopeConfig | None = None,
    source_id: str = '',
    threads: int | None = None,
) -> EnvelopeSeries:
    config = config or EnvelopeConfig()
    if audio.rate < config.min_audio_rate or audio.rate <= 2 * config.fmax_hz:
        raise AudioRateError(
            f'Частота аудио {audio.rate} Гц ниже {config.min_audio_rate} Гц'
        )
    # Рабочая точность float32 после нормировки: огибающая не зависит от
    # усиления входа побитово, а не только до округления.
    z = zscore_array(audio.samples).astype(np.float32).astype(float)
    logger.debug(
        'Огибающая {source}: {n} отсч. @ {rate} Гц, {bands} полос',
        source=source_id,
        n=z.size,
        rate=audio.rate,
        bands=config.n_bands,
    )
    broadband = band_average_envelope(z, audio.rate, config, threads)
    lowpass = design_butterworth(config.butter_order, config.lowpass_hz, audio.rate)
    smoothed = iir_filter_array(lowpass, broadband)
    samples = resample_array(smoothed, audio.rate, config.output_rate)
    return EnvelopeSeries(samples, config.output_rate, source_id)


def envelope_from_wav(
    path: Path, config: EnvelopeConfig | None = None, threads: int | None = None
) -> EnvelopeSeries:
    """Огибающая первого канала WAV; source_id — имя файла без расширения."""
    audio = read_wav(path)
    return extract_broadband_envelope(audio, config, Path(path).stem, threads)


def segment_envelope(
    env: EnvelopeSeries, epoch_s: float = EPOCH_S
) -> list[EnvelopeSeries]:
    """Нарезать огибающую на целые эпохи, хвост отбрасывается."""
    size = int(round(epoch_s * env.rate))
    count = len(env) // size
    if count == 0:
        logger.warning(
            'Огибающая {source} ({dur:.1f} с) короче одной эпохи {epoch} с',
            source=env.source_id,
            dur=env.duration_s,
            epoch=epoch_s,
        )
    return [
        EnvelopeSeries(
            env.samples[k * size : (k + 1) * size],
            env.rate,
            f'{env.source_id}#{k}',
        )
        for k in range(count)
    ]
