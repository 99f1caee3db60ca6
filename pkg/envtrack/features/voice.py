"""Голосовые метрики в духе voice report фонетических программ.

Автокорреляционный трекер f0, глоттальные циклы по пикам волны, jitter,
shimmer, NHR и минимальная интенсивность.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as spfft
from scipy.signal import windows

from envtrack.constants import (
    INTENSITY_FLOOR,
    INTENSITY_FRAME_S,
    INTENSITY_HOP_S,
    INTENSITY_REF_PA,
    MAX_PERIOD_FACTOR,
    PITCH_CEILING_HZ,
    PITCH_FLOOR_HZ,
    PITCH_HOP_S,
    PITCH_OCTAVE_COST,
    PITCH_SILENCE_THRESHOLD,
    PITCH_VOICING_THRESHOLD,
)
from envtrack.exceptions import InputValidationError
from envtrack.sigcore import Signal


class AudioTooShortError(InputValidationError):
    pass


class UnvoicedAudioError(InputValidationError):
    pass


class TooFewPeriodsError(InputValidationError):
    pass


class NonPositiveAmplitudeError(InputValidationError):
    pass


@dataclass(frozen=True, eq=False)
class PitchTrack:
    """Покадровый f0; в невокализованных кадрах f0 и strength равны NaN."""

    times_s: np.ndarray
    f0_hz: np.ndarray
    strength: np.ndarray
    floor_hz: float
    ceiling_hz: float

    @property
    def voiced(self) -> np.ndarray:
        return np.isfinite(self.f0_hz)

    @property
    def is_unvoiced(self) -> bool:
        return not bool(np.any(self.voiced))


@dataclass(frozen=True, eq=False)
class GlottalCycles:
    periods_s: np.ndarray
    amplitudes: np.ndarray


def _frames(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    return sliding_window_view(samples, frame_len)[::hop]


def _normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Автокорреляция окна Ханна, делённая на автокорреляцию самого окна."""
    frame_len = frames.shape[1]
    window = windows.hann(frame_len)
    n_fft = spfft.next_fast_len(2 * frame_len)

    def autocorr(x: np.ndarray) -> np.ndarray:
        spectrum = spfft.rfft(x, n_fft, axis=-1)
        return spfft.irfft(np.abs(spectrum) ** 2, n_fft, axis=-1)[..., : max_lag + 2]

    centered = frames - frames.mean(axis=1, keepdims=True)
    ac = autocorr(centered * window)
    ac_window = autocorr(window)
    energy = ac[:, :1]
    with np.errstate(divide='ignore', invalid='ignore'):
        r = (ac / energy) / (ac_window / ac_window[0])
    return np.where(energy > 0, r, 0.0)


def _best_candidate(
    r: np.ndarray,
    rate: float,
    min_lag: int,
    max_lag: int,
    floor: float,
    octave_cost: float,
) -> tuple[float, float] | None:
    lags = np.arange(max(min_lag, 1), max_lag + 1)
    left, mid, right = r[lags - 1], r[lags], r[lags + 1]
    maxima = (mid > left) & (mid >= right)
    if not np.any(maxima):
        return None
    lags, left, mid, right = lags[maxima], left[maxima], mid[maxima], right[maxima]
    # Параболическая интерполяция пика по трём точкам.
    curvature = left - 2 * mid + right
    with np.errstate(divide='ignore', invalid='ignore'):
        shift = np.where(curvature < 0, 0.5 * (left - right) / curvature, 0.0)
    peak = mid - 0.25 * (left - right) * shift
    lag_exact = lags + shift
    strength = peak - octave_cost * np.log2(floor * lag_exact / rate)
    best = int(np.argmax(strength))
    return rate / float(lag_exact[best]), float(min(peak[best], 1.0))


def pitch_track(
    audio: Signal,
    floor: float = PITCH_FLOOR_HZ,
    ceiling: float = PITCH_CEILING_HZ,
    voicing_threshold: float = PITCH_VOICING_THRESHOLD,
    silence_threshold: float = PITCH_SILENCE_THRESHOLD,
    octave_cost: float = PITCH_OCTAVE_COST,
    hop_s: float = PITCH_HOP_S,
) -> PitchTrack:
    """Автокорреляционный трекер: кадр в три периода floor (40 мс), шаг 10 мс.

    Кадр вокализован, если нормированный пик автокорреляции не ниже
    `voicing_threshold`, а локальная амплитуда не ниже `silence_threshold`
    от глобального пика. Кандидаты ранжируются с поправкой за октаву
    (выигрывает более высокий тон при почти равных пиках).
    """
    if audio.duration_s < 0.1:
        raise AudioTooShortError(f'Аудио {audio.duration_s * 1000:.0f} мс < 100 мс')
    if not 0 < floor < ceiling:
        raise InputValidationError(f'Нужно 0 < floor < ceiling: {floor}, {ceiling}')
    rate = audio.rate
    frame_len = int(round(3 * rate / floor))
    hop = max(1, int(round(hop_s * rate)))
    samples = audio.samples
    if samples.size < frame_len:
        raise AudioTooShortError(
            f'Аудио короче одного кадра анализа ({frame_len} отсчётов)'
        )
    min_lag = int(np.floor(rate / ceiling))
    max_lag = min(int(np.ceil(rate / floor)), frame_len - 2)
    frames = _frames(samples, frame_len, hop)
    times = (np.arange(frames.shape[0]) * hop + frame_len / 2) / rate
    f0 = np.full(frames.shape[0], np.nan)
    strength = np.full(frames.shape[0], np.nan)

    local_peak = np.max(np.abs(frames - frames.mean(axis=1, keepdims=True)), axis=1)
    global_peak = np.max(np.abs(samples - samples.mean()))
    if global_peak == 0:
        return PitchTrack(times, f0, strength, floor, ceiling)

    r = _normalized_autocorrelation(frames, max_lag)
    for i in np.flatnonzero(local_peak >= silence_threshold * global_peak):
        candidate = _best_candidate(r[i], rate, min_lag, max_lag, floor, octave_cost)
        if candidate is None:
            continue
        freq, peak = candidate
        if peak >= voicing_threshold and floor <= freq <= ceiling:
            f0[i] = freq
            strength[i] = peak
    return PitchTrack(times, f0, strength, floor, ceiling)


def pitch_statistics(track: PitchTrack) -> dict[str, float] | None:
    """Статистики f0 по вокализованным кадрам; None для невокализованного аудио."""
    if track.is_unvoiced:
        return None
    voiced = track.f0_hz[track.voiced]
    return {
        'meanPitch': float(np.mean(voiced)),
        'medianPitch': float(np.median(voiced)),
        'sdPitch': float(np.std(voiced, ddof=1)) if voiced.size > 1 else 0.0,
        'minPitch': float(np.min(voiced)),
        'maxPitch': float(np.max(voiced)),
    }


def _voiced_runs(voiced: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1) - 1))


def extract_glottal_cycles(
    audio: Signal,
    track: PitchTrack,
    max_period_factor: float = MAX_PERIOD_FACTOR,
) -> GlottalCycles:
    """Глоттальные циклы: положительные пики волны, по одному на период f0.

    Внутри каждого вокализованного участка первый пик ищется в пределах
    первого периода, каждый следующий — в окне [0.8T, 1.2T] после
    предыдущего, где T берётся из трека f0. Периоды вне [1/ceiling, 1/floor]
    и скачки длительности больше `max_period_factor` отбрасываются.
    """
    samples = audio.samples
    rate = audio.rate
    if track.is_unvoiced:
        return GlottalCycles(np.empty(0), np.empty(0))
    voiced_times = track.times_s[track.voiced]
    voiced_f0 = track.f0_hz[track.voiced]
    half_hop = (
        (track.times_s[1] - track.times_s[0]) / 2 if track.times_s.size > 1 else 0.0
    )

    def period_at(sample: int) -> float:
        return rate / float(np.interp(sample / rate, voiced_times, voiced_f0))

    periods = []
    amplitudes = []
    for first, last in _voiced_runs(track.voiced):
        start = max(0, int((track.times_s[first] - half_hop) * rate))
        stop = min(samples.size, int(np.ceil((track.times_s[last] + half_hop) * rate)))
        span = int(np.ceil(period_at(start)))
        if start + span > stop:
            continue
        points = [start + int(np.argmax(samples[start : start + span]))]
        while True:
            period = period_at(points[-1])
            lo = points[-1] + int(0.8 * period)
            hi = points[-1] + int(np.ceil(1.2 * period)) + 1
            if hi > stop:
                break
            points.append(lo + int(np.argmax(samples[lo:hi])))
        points = np.asarray(points)
        run_periods = np.diff(points) / rate
        bounding = set()
        previous = None
        for k, period in enumerate(run_periods):
            in_range = 1 / track.ceiling_hz <= period <= 1 / track.floor_hz
            regular = previous is None or (
                1 / max_period_factor <= period / previous <= max_period_factor
            )
            if in_range and regular:
                periods.append(period)
                bounding.update((k, k + 1))
                previous = period
        amplitudes.extend(samples[points[sorted(bounding)]])
    amplitudes = np.asarray(amplitudes)
    return GlottalCycles(np.asarray(periods), amplitudes[amplitudes > 0])


def _perturbation(values: np.ndarray, width: int) -> float:
    """Среднее |xᵢ − скользящее среднее по `width` точкам| / mean(x)."""
    half = width // 2
    if values.size < width:
        return float('nan')
    local = np.convolve(values, np.ones(width) / width, mode='valid')
    deviation = np.abs(values[half : values.size - half] - local)
    return float(np.mean(deviation) / values.mean())


def jitter_metrics(periods) -> dict[str, float]:
    """Jitter по последовательности периодов в секундах.

    Нужно не меньше трёх периодов; ppq5 при менее чем пяти равен NaN.
    """
    periods = np.asarray(periods, dtype=float)
    if periods.size < 3:
        raise TooFewPeriodsError(f'Для jitter нужно ≥ 3 периодов, есть {periods.size}')
    loc_abs = float(np.mean(np.abs(np.diff(periods))))
    return {
        'jitter_loc': loc_abs / float(periods.mean()),
        'jitter_loc_abs': loc_abs,
        'jitter_rap': _perturbation(periods, 3),
        'jitter_ppq5': _perturbation(periods, 5),
    }


def shimmer_metrics(amplitudes) -> dict[str, float]:
    """Shimmer по пиковым амплитудам циклов.

    apq5 и apq11 равны NaN, если точек меньше пяти и одиннадцати.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    if amplitudes.size < 3:
        raise TooFewPeriodsError(
            f'Для shimmer нужно ≥ 3 амплитуд, есть {amplitudes.size}'
        )
    if np.any(amplitudes <= 0):
        raise NonPositiveAmplitudeError('Амплитуды циклов должны быть > 0')
    return {
        'shimmer_loc': float(np.mean(np.abs(np.diff(amplitudes))) / amplitudes.mean()),
        'shimmer_loc_dB': float(
            np.mean(np.abs(20 * np.log10(amplitudes[:-1] / amplitudes[1:])))
        ),
        'shimmer_apq3': _perturbation(amplitudes, 3),
        'shimmer_apq5': _perturbation(amplitudes, 5),
        'shimmer_apq11': _perturbation(amplitudes, 11),
    }


def harmonicity(track: PitchTrack) -> float:
    """Средний NHR = (1 − r)/r по вокализованным кадрам трека."""
    if track.is_unvoiced:
        raise UnvoicedAudioError('NHR не определён: нет вокализованных кадров')
    r = np.clip(track.strength[track.voiced], None, 1.0)
    return float(np.mean((1 - r) / r))


def intensity_contour(
    audio: Signal,
    frame_s: float = INTENSITY_FRAME_S,
    hop_s: float = INTENSITY_HOP_S,
) -> tuple[np.ndarray, np.ndarray]:
    """Интенсивность в дБ относительно 20 мкПа по кадрам 32 мс.

    Тишина упирается в нижнюю границу среднего квадрата, а не в −inf.
    """
    frame_len = max(1, int(round(frame_s * audio.rate)))
    hop = max(1, int(round(hop_s * audio.rate)))
    if audio.samples.size < frame_len:
        raise AudioTooShortError(f'Аудио короче кадра интенсивности {frame_s} с')
    frames = _frames(audio.samples, frame_len, hop)
    centered = frames - frames.mean(axis=1, keepdims=True)
    mean_square = np.maximum(np.mean(centered**2, axis=1), INTENSITY_FLOOR)
    times = (np.arange(frames.shape[0]) * hop + frame_len / 2) / audio.rate
    return times, 10 * np.log10(mean_square / INTENSITY_REF_PA**2)


def min_intensity(audio: Signal) -> float:
    return float(np.min(intensity_contour(audio)[1]))
