"""Мультитейпер-спектр, фрактальная (1/f) компонента и периодическая мощность."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import windows

from envtrack.constants import (
    BISQUARE_C,
    FEATURE_BANDS_HZ,
    FRACTAL_ITERATIONS,
    MULTITAPER_RANGE_HZ,
    MULTITAPER_SMOOTHING_HZ,
)
from envtrack.exceptions import InputValidationError
from envtrack.sigcore import Signal


class SegmentTooShortError(InputValidationError):
    pass


class NonPositivePowerError(InputValidationError):
    pass


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    freqs_hz: np.ndarray
    power: np.ndarray
    n_tapers: int
    smoothing_hz: float


@dataclass(frozen=True)
class FractalFit:
    """log10 P(f) = offset − alpha·log10 f."""

    alpha: float
    offset: float

    def evaluate(self, freqs_hz: np.ndarray) -> np.ndarray:
        return 10 ** (self.offset - self.alpha * np.log10(freqs_hz))


def n_tapers(duration_s: float, smoothing_hz: float) -> int:
    return int(math.floor(2 * duration_s * smoothing_hz)) - 1


def multitaper_psd(
    segment: Signal,
    smoothing_hz: float = MULTITAPER_SMOOTHING_HZ,
    freq_range: tuple[float, float] = MULTITAPER_RANGE_HZ,
) -> PowerSpectrum:
    """Односторонняя СПМ, усреднённая по K DPSS-тейперам.

    NW = T·smoothing, K = floor(2NW) − 1 (29 тейперов для 30 с при 0.5 Гц).
    Тейперы с единичной энергией, поэтому ∑P·df равна дисперсии сегмента.
    """
    duration = segment.duration_s
    if duration < 2 / smoothing_hz:
        raise SegmentTooShortError(
            f'Сегмент {duration:.2f} с короче 2/smoothing = {2 / smoothing_hz:.2f} с'
        )
    k = n_tapers(duration, smoothing_hz)
    tapers = windows.dpss(segment.samples.size, duration * smoothing_hz, Kmax=k)
    x = segment.samples - segment.samples.mean()
    spectra = np.fft.rfft(tapers * x, axis=1)
    power = 2 * np.mean(np.abs(spectra) ** 2, axis=0) / segment.rate
    freqs = np.fft.rfftfreq(segment.samples.size, 1 / segment.rate)
    lo, hi = freq_range
    keep = (freqs >= lo) & (freqs <= hi)
    return PowerSpectrum(freqs[keep], power[keep], k, smoothing_hz)


def fit_fractal(psd: PowerSpectrum, iterations: int = FRACTAL_ITERATIONS) -> FractalFit:
    """Робастная линейная регрессия log-мощности на log-частоту.

    После первой МНК-подгонки положительные остатки (пики) получают вес
    бисквера, отрицательные остаются с весом 1: так осцилляции не тянут
    фрактальную прямую вверх.
    """
    support = psd.freqs_hz > 0
    freqs = psd.freqs_hz[support]
    power = psd.power[support]
    if freqs.size < 2:
        raise NonPositivePowerError('Для подгонки нужно минимум две частоты > 0')
    if np.any(power <= 0):
        raise NonPositivePowerError(
            f'Неположительная мощность в {int(np.sum(power <= 0))} бинах'
        )
    x = np.log10(freqs)
    y = np.log10(power)
    design = np.column_stack([np.ones_like(x), -x])
    weights = np.ones_like(x)
    coef = np.zeros(2)
    for _ in range(iterations + 1):
        sqrt_w = np.sqrt(weights)
        coef, *_ = np.linalg.lstsq(design * sqrt_w[:, None], y * sqrt_w, rcond=None)
        residuals = y - design @ coef
        scale = 1.4826 * np.median(np.abs(residuals - np.median(residuals)))
        if scale <= 0:
            break
        u = residuals / (BISQUARE_C * scale)
        weights = np.where(residuals > 0, np.clip(1 - u**2, 0, None) ** 2, 1.0)
    return FractalFit(alpha=float(coef[1]), offset=float(coef[0]))


def periodic_fraction(psd: PowerSpectrum) -> PowerSpectrum:
    """Отношение спектра к подогнанной фрактальной компоненте."""
    fit = fit_fractal(psd)
    support = psd.freqs_hz > 0
    ratio = psd.power[support] / fit.evaluate(psd.freqs_hz[support])
    return PowerSpectrum(psd.freqs_hz[support], ratio, psd.n_tapers, psd.smoothing_hz)


def band_periodic_power(
    ratio_psd: PowerSpectrum, duration_s: float
) -> dict[str, float]:
    """Сумма (ratio − 1)₊ по бинам каждой полосы на секунду сегмента."""
    if duration_s <= 0:
        raise InputValidationError(f'duration_s должна быть > 0: {duration_s}')
    excess = np.clip(ratio_psd.power - 1, 0, None)
    freqs = ratio_psd.freqs_hz
    last = list(FEATURE_BANDS_HZ)[-1]
    result = {}
    for name, (lo, hi) in FEATURE_BANDS_HZ.items():
        upper = freqs <= hi if name == last else freqs < hi
        result[name] = float(np.sum(excess[(freqs >= lo) & upper]) / duration_s)
    return result
