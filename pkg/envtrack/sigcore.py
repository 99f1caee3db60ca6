"""Детерминированные DSP-примитивы, общие для всех модулей.

Все фильтры применяются без фазового сдвига: FIR — компенсацией задержки
симметричного ядра, IIR — прямым и обратным проходом. Интерпретация лагов
TRF требует, чтобы фильтрация не вносила собственной задержки.
"""

from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np
from scipy import signal as sps

from envtrack.constants import GAMMATONE_ORDER, FilterKind, WindowKind
from envtrack.exceptions import InputValidationError, NumericFailure
from envtrack.utils import parallel_map


class SignalError(InputValidationError):
    pass


class FilterDesignError(InputValidationError):
    pass


class SignalTooShortError(InputValidationError):
    pass


class DegenerateSignalError(NumericFailure):
    pass


@dataclass(frozen=True, eq=False)
class Signal:
    """Одноканальный временной ряд с частотой дискретизации."""

    samples: np.ndarray
    rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise SignalError(f'Ожидался одномерный ряд, shape={samples.shape}')
        if samples.size < 1:
            raise SignalError('Пустой сигнал')
        if not np.all(np.isfinite(samples)):
            raise SignalError('Сигнал содержит NaN/inf')
        if not self.rate > 0:
            raise SignalError(f'Частота дискретизации должна быть > 0: {self.rate}')
        object.__setattr__(self, 'samples', samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    kind: FilterKind
    cutoff_hz: float
    order: int
    window: WindowKind
    rate: float


@dataclass(frozen=True, eq=False)
class IirBiquadChain:
    sos: np.ndarray
    kind: FilterKind
    order: int
    cutoff_hz: float
    rate: float


@dataclass(frozen=True, eq=False)
class GammatoneBank:
    center_frequencies_hz: np.ndarray
    bandwidths_hz: np.ndarray
    n_bands: int
    fmin_hz: float
    fmax_hz: float
    order: int = GAMMATONE_ORDER

    def coefficients(self, rate: float) -> tuple[np.ndarray, np.ndarray]:
        """Комплексные полюса и нормирующие множители полос для частоты `rate`.

        Полюс — λ·e^{iβ}: λ задаёт ширину полосы (ERB), β — центральную частоту.
        Множитель 2(1−|λ|)^n даёт единичное усиление вещественной части на CF.
        """
        a_gamma = (
            np.pi
            * factorial(2 * self.order - 2)
            * 2.0 ** (-(2 * self.order - 2))
            / factorial(self.order - 1) ** 2
        )
        b = self.bandwidths_hz / a_gamma
        radius = np.exp(-2 * np.pi * b / rate)
        beta = 2 * np.pi * self.center_frequencies_hz / rate
        poles = radius * np.exp(1j * beta)
        gains = 2 * (1 - np.abs(poles)) ** self.order
        return poles, gains


def equivalent_rectangular_bandwidth(center_frequency_hz):
    """ERB слухового фильтра (Glasberg & Moore), Гц."""
    return 24.7 + center_frequency_hz * 0.107939


# --- FIR ---------------------------------------------------------------------


def design_fir(
    kind: FilterKind,
    cutoff_hz: float,
    order: int,
    window: WindowKind,
    rate: float,
) -> FirFilter:
    """Оконный sinc-фильтр с линейной фазой, cutoff — точка −6 дБ.

    НЧ-ядро нормируется на единичное усиление на DC; ВЧ получается спектральной
    инверсией, поэтому его усиление на DC равно нулю точно.
    """
    if not 0 < cutoff_hz < rate / 2:
        raise FilterDesignError(
            f'Частота среза {cutoff_hz} Гц вне (0, {rate / 2}) для fs={rate}'
        )
    if order < 2 or order % 2:
        raise FilterDesignError(f'Порядок FIR должен быть чётным и >= 2: {order}')
    n_taps = order + 1
    m = np.arange(n_taps) - order / 2
    fc = cutoff_hz / rate
    taps = 2 * fc * np.sinc(2 * fc * m)
    taps *= sps.get_window(window.value, n_taps, fftbins=False)
    taps /= taps.sum()
    if kind is FilterKind.highpass:
        taps = -taps
        taps[order // 2] += 1.0
    # симметрия ядра точная, а не с точностью до округления суммы выше
    taps = (taps + taps[::-1]) / 2
    return FirFilter(
        taps=taps,
        kind=kind,
        cutoff_hz=cutoff_hz,
        order=order,
        window=window,
        rate=rate,
    )


def fir_filter_array(taps: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Нуль-фазовая FIR-фильтрация вдоль последней оси.

    Края дополняются отражением на длину ядра, затем свёртка и сдвиг на
    групповую задержку order/2.
    """
    data = np.asarray(data, dtype=float)
    n_taps = len(taps)
    n = data.shape[-1]
    if n <= 3 * n_taps:
        raise SignalTooShortError(
            f'Сигнал ({n} отсч.) короче трёх длин фильтра ({3 * n_taps} отсч.)'
        )
    pad = [(0, 0)] * (data.ndim - 1) + [(n_taps, n_taps)]
    padded = np.pad(data, pad, mode='reflect')
    kernel = np.reshape(taps, (1,) * (data.ndim - 1) + (n_taps,))
    full = sps.fftconvolve(padded, kernel, mode='full', axes=-1)
    start = n_taps + (n_taps - 1) // 2
    return full[..., start : start + n]


def apply_zero_phase(filt: FirFilter, signal: Signal) -> Signal:
    return Signal(fir_filter_array(filt.taps, signal.samples), signal.rate)


# --- IIR ---------------------------------------------------------------------


def design_butterworth(
    order: int,
    cutoff_hz: float,
    rate: float,
    kind: FilterKind = FilterKind.lowpass,
) -> IirBiquadChain:
    if not 0 < cutoff_hz < rate / 2:
        raise FilterDesignError(
            f'Частота среза {cutoff_hz} Гц вне (0, {rate / 2}) для fs={rate}'
        )
    if order < 1:
        raise FilterDesignError(f'Порядок Баттерворта должен быть >= 1: {order}')
    sos = sps.butter(order, cutoff_hz, btype=kind.value, output='sos', fs=rate)
    _, poles, _ = sps.sos2zpk(sos)
    if np.any(np.abs(poles) >= 1):
        raise FilterDesignError('Неустойчивый IIR: полюс вне единичного круга')
    return IirBiquadChain(
        sos=sos, kind=kind, order=order, cutoff_hz=cutoff_hz, rate=rate
    )


def iir_filter_array(chain: IirBiquadChain, data: np.ndarray) -> np.ndarray:
    return sps.sosfiltfilt(chain.sos, np.asarray(data, dtype=float), axis=-1)


def apply_iir_zero_phase(chain: IirBiquadChain, signal: Signal) -> Signal:
    return Signal(iir_filter_array(chain, signal.samples), signal.rate)


def frequency_response(
    filt: FirFilter | IirBiquadChain, freqs_hz: np.ndarray
) -> np.ndarray:
    """Комплексная АЧХ/ФЧХ одного прохода фильтра на заданных частотах."""
    freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
    if isinstance(filt, FirFilter):
        _, response = sps.freqz(filt.taps, worN=freqs_hz, fs=filt.rate)
    else:
        _, response = sps.sosfreqz(filt.sos, worN=freqs_hz, fs=filt.rate)
    return response


# --- огибающие и гамматон ----------------------------------------------------


def hilbert_envelope(signal: Signal) -> Signal:
    if len(signal) < 8:
        raise SignalTooShortError(f'Для Гильберта нужно >= 8 отсчётов: {len(signal)}')
    return Signal(np.abs(sps.hilbert(signal.samples)), signal.rate)


def design_gammatone_bank(
    n_bands: int, fmin_hz: float, fmax_hz: float, order: int = GAMMATONE_ORDER
) -> GammatoneBank:
    """Банк с логарифмически равномерными CF: cf[k] = fmin·(fmax/fmin)^(k/(n−1))."""
    if n_bands < 2:
        raise FilterDesignError(f'В банке должно быть >= 2 полос: {n_bands}')
    if not 0 < fmin_hz < fmax_hz:
        raise FilterDesignError(f'Нужно 0 < fmin < fmax: {fmin_hz}, {fmax_hz}')
    cf = fmin_hz * (fmax_hz / fmin_hz) ** (np.arange(n_bands) / (n_bands - 1))
    cf[-1] = fmax_hz
    return GammatoneBank(
        center_frequencies_hz=cf,
        bandwidths_hz=equivalent_rectangular_bandwidth(cf),
        n_bands=n_bands,
        fmin_hz=fmin_hz,
        fmax_hz=fmax_hz,
        order=order,
    )


def _check_gammatone_rate(bank: GammatoneBank, rate: float) -> None:
    if rate <= 2 * bank.fmax_hz:
        raise SignalError(
            f'Частота {rate} Гц слишком мала для fmax={bank.fmax_hz} Гц банка'
        )


def gammatone_band(
    samples: np.ndarray, pole: complex, gain: float, order: int
) -> np.ndarray:
    """Вещественный выход одной полосы: каскад из `order` комплексных однополюсников."""
    out = sps.lfilter([gain], [1.0, -pole], samples.astype(complex))
    for _ in range(order - 1):
        out = sps.lfilter([1.0], [1.0, -pole], out)
    return out.real


def gammatone_analyze(
    bank: GammatoneBank, signal: Signal, threads: int | None = None
) -> list[Signal]:
    """Разложить сигнал на полосы банка (вещественные выходы той же длины)."""
    _check_gammatone_rate(bank, signal.rate)
    poles, gains = bank.coefficients(signal.rate)

    def run(band: int) -> Signal:
        out = gammatone_band(signal.samples, poles[band], gains[band], bank.order)
        return Signal(out, signal.rate)

    return parallel_map(run, range(bank.n_bands), threads)


# --- частота дискретизации и нормировка ---------------------------------------


def _rate_ratio(rate: float, target_rate: float) -> Fraction:
    return (Fraction(target_rate) / Fraction(rate)).limit_denominator(100_000)


def resample_array(data: np.ndarray, rate: float, target_rate: float) -> np.ndarray:
    """Полифазная передискретизация вдоль последней оси.

    Длина выхода — round(n·target/rate); края продолжаются линейно, поэтому
    константа остаётся константой.
    """
    if target_rate <= 0:
        raise SignalError(f'Целевая частота должна быть > 0: {target_rate}')
    data = np.asarray(data, dtype=float)
    n = data.shape[-1]
    n_out = int(np.floor(n * target_rate / rate + 0.5))
    if target_rate == rate:
        return data.copy()
    ratio = _rate_ratio(rate, target_rate)
    out = sps.resample_poly(
        data, ratio.numerator, ratio.denominator, axis=-1, padtype='line'
    )
    if out.shape[-1] < n_out:
        pad = [(0, 0)] * (data.ndim - 1) + [(0, n_out - out.shape[-1])]
        out = np.pad(out, pad, mode='edge')
    return out[..., :n_out]


def resample(signal: Signal, target_rate: float) -> Signal:
    return Signal(resample_array(signal.samples, signal.rate, target_rate), target_rate)


def zscore_array(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0 or np.ptp(samples) == 0:
        raise DegenerateSignalError('zero variance: сигнал постоянен (тишина?)')
    return (samples - samples.mean()) / samples.std()


def zscore(signal: Signal) -> Signal:
    return Signal(zscore_array(signal.samples), signal.rate)
