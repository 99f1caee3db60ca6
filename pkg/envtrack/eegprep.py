"""Препроцессинг ЭЭГ без ICA.

Плохие каналы → аналитическая копия (НЧ 40 Гц → 250 Гц → ВЧ 1 Гц → отбраковка
1-с эпох) → финальная фильтрация НЧ 30 / ВЧ 0.3 Гц на исходной частоте →
общий средний референт → сферическая интерполяция плохих каналов → 64 Гц →
30-с эпохи с маской отбраковки.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg, stats

from envtrack.constants import (
    BAD_CHANNEL_SD,
    EEG_ANALYSIS_HIGHPASS,
    EEG_ANALYSIS_LOWPASS,
    EEG_ANALYSIS_RATE,
    EEG_FINAL_HIGHPASS,
    EEG_FINAL_LOWPASS,
    ENVELOPE_RATE,
    EPOCH_S,
    REJECT_AMPLITUDE_UV,
    REJECT_EPOCH_S,
    REJECT_KURTOSIS_SD,
    SPLINE_LEGENDRE_TERMS,
    SPLINE_ORDER,
    SPLINE_REGULARIZATION,
    STANDARD_MONTAGE_24,
    FilterKind,
)
from envtrack.exceptions import InputValidationError
from envtrack.logging import logger
from envtrack.schemas import TrialEntry
from envtrack.sigcore import design_fir, fir_filter_array, resample_array


class EegInputError(InputValidationError):
    pass


class TooManyBadChannelsError(EegInputError):
    pass


class MissingPositionsError(EegInputError):
    pass


class ManifestMismatchError(EegInputError):
    pass


@dataclass(frozen=True, eq=False)
class EegRecording:
    """Каналы × отсчёты (мкВ) с метками и позициями на единичной сфере."""

    data: np.ndarray
    rate: float
    channel_labels: tuple[str, ...]
    channel_positions: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2:
            raise EegInputError(f'Нужна матрица >= 2 каналов, shape={data.shape}')
        if len(self.channel_labels) != data.shape[0]:
            raise EegInputError(
                f'Меток {len(self.channel_labels)}, каналов {data.shape[0]}'
            )
        if not np.all(np.isfinite(data)):
            raise EegInputError('ЭЭГ содержит NaN/inf')
        if not self.rate > 0:
            raise EegInputError(f'Частота дискретизации должна быть > 0: {self.rate}')
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'channel_labels', tuple(self.channel_labels))
        if self.channel_positions is not None:
            positions = np.asarray(self.channel_positions, dtype=float)
            if positions.shape != (data.shape[0], 3):
                raise EegInputError(f'Позиции должны быть {data.shape[0]}×3')
            if np.any(np.abs(np.linalg.norm(positions, axis=1) - 1) > 1e-6):
                raise EegInputError('Позиции электродов не на единичной сфере')
            object.__setattr__(self, 'channel_positions', positions)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, rate: float | None = None):
        return replace(self, data=data, rate=self.rate if rate is None else rate)


@dataclass(frozen=True, eq=False)
class EpochSet:
    epochs: np.ndarray
    rate: float
    epoch_s: float
    rejection_mask: np.ndarray
    trial_meta: tuple[TrialEntry, ...] = ()

    def __post_init__(self):
        if len(self.rejection_mask) != len(self.epochs):
            raise EegInputError('Длина маски не равна числу эпох')

    def __len__(self) -> int:
        return len(self.epochs)


@dataclass(frozen=True, eq=False)
class PreprocResult:
    epochs: EpochSet
    # Очищенная непрерывная запись на 64 Гц (для команды preproc).
    continuous: EegRecording
    bad_channels: list[int]
    window_amplitude: np.ndarray
    window_kurtosis: np.ndarray
    report: list[dict] = field(default_factory=list)


def detect_bad_channels(rec: EegRecording) -> list[int]:
    """Каналы, чьё SD выходит за mean(SD) ± 2·SD(SD) по каналам."""
    if rec.n_channels < 3:
        raise EegInputError('Для поиска плохих каналов нужно >= 3 каналов')
    sds = rec.data.std(axis=1, ddof=1)
    center = sds.mean()
    spread = sds.std(ddof=1)
    # разброс на уровне округления — каналы одинаковые
    if spread <= 1e-12 * max(center, np.finfo(float).tiny):
        return []
    bad = np.flatnonzero(np.abs(sds - center) > BAD_CHANNEL_SD * spread)
    return [int(k) for k in bad]


def epoch_rejection_flags(
    epochs: np.ndarray,
    amp_threshold_uv: float = REJECT_AMPLITUDE_UV,
    kurtosis_sd: float = REJECT_KURTOSIS_SD,
) -> tuple[np.ndarray, np.ndarray]:
    """Флаги отбраковки по амплитуде и по эксцессу для эпох × каналы × отсчёты.

    Эксцесс (без вычитания 3) стандартизуется по эпохам отдельно в каждом
    канале; эпоха отбраковывается, если хоть в одном канале z > kurtosis_sd.
    """
    epochs = np.asarray(epochs, dtype=float)
    if epochs.ndim != 3 or len(epochs) == 0:
        raise EegInputError(
            f'Ожидались эпохи × каналы × отсчёты, shape={epochs.shape}'
        )
    amplitude = np.any(np.abs(epochs) > amp_threshold_uv, axis=(1, 2))
    kurtosis = np.zeros(len(epochs), dtype=bool)
    if len(epochs) >= 2:
        with np.errstate(all='ignore'):
            kurt = stats.kurtosis(epochs, axis=2, fisher=False)
            center = np.nanmean(kurt, axis=0)
            spread = np.nanstd(kurt, axis=0, ddof=1)
            z = (kurt - center) / spread
        z[~np.isfinite(z)] = 0.0
        kurtosis = np.any(z > kurtosis_sd, axis=1)
    return amplitude, kurtosis


def reject_epochs(
    epochs: np.ndarray,
    amp_threshold_uv: float = REJECT_AMPLITUDE_UV,
    kurtosis_sd: float = REJECT_KURTOSIS_SD,
) -> np.ndarray:
    amplitude, kurtosis = epoch_rejection_flags(epochs, amp_threshold_uv, kurtosis_sd)
    return amplitude | kurtosis


def montage_positions(labels: Sequence[str] | None = None) -> np.ndarray:
    """Единичные векторы электродов стандартного монтажа (по умолчанию все 24)."""
    labels = list(STANDARD_MONTAGE_24) if labels is None else list(labels)
    missing = [label for label in labels if label not in STANDARD_MONTAGE_24]
    if missing:
        raise MissingPositionsError(f'Нет позиций в стандартном монтаже: {missing}')
    angles = np.radians([STANDARD_MONTAGE_24[label] for label in labels])
    azimuth, elevation = angles[:, 0], angles[:, 1]
    return np.column_stack(
        [
            np.cos(elevation) * np.cos(azimuth),
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
        ]
    )


def rereference_common_average(
    rec: EegRecording, exclude: Sequence[int] = ()
) -> EegRecording:
    """Вычесть среднее по каналам; каналы из `exclude` в референт не входят."""
    reference_channels = np.setdiff1d(np.arange(rec.n_channels), list(exclude))
    reference = rec.data[reference_channels].mean(axis=0)
    return rec.with_data(rec.data - reference)


def _spline_g(cosines: np.ndarray) -> np.ndarray:
    n = np.arange(SPLINE_LEGENDRE_TERMS + 1, dtype=float)
    coeffs = np.zeros_like(n)
    coeffs[1:] = (2 * n[1:] + 1) / (n[1:] * (n[1:] + 1)) ** SPLINE_ORDER
    return legendre.legval(np.clip(cosines, -1, 1), coeffs) / (4 * np.pi)


def spherical_spline_matrix(
    positions: np.ndarray, good: Sequence[int], bad: Sequence[int]
) -> np.ndarray:
    """Матрица bad × good, переводящая значения хороших каналов в плохие.

    Сплайн порядка m с константой: [G + λI, 1; 1ᵀ, 0]·[C; c0] = [V; 0].
    """
    good_pos = positions[list(good)]
    bad_pos = positions[list(bad)]
    n_good = len(good)
    system = np.zeros((n_good + 1, n_good + 1))
    system[:n_good, :n_good] = _spline_g(good_pos @ good_pos.T)
    system[:n_good, :n_good] += SPLINE_REGULARIZATION * np.eye(n_good)
    system[:n_good, n_good] = 1.0
    system[n_good, :n_good] = 1.0
    rhs = np.vstack([np.eye(n_good), np.zeros((1, n_good))])
    weights = linalg.solve(system, rhs)
    evaluate = np.hstack([_spline_g(bad_pos @ good_pos.T), np.ones((len(bad), 1))])
    return evaluate @ weights


def spherical_interpolate(
    rec: EegRecording, bad_channels: Sequence[int]
) -> EegRecording:
    bad = sorted(set(int(k) for k in bad_channels))
    if not bad:
        return rec
    if rec.channel_positions is None:
        raise MissingPositionsError('Для интерполяции нужны позиции электродов')
    if len(bad) >= rec.n_channels - 3:
        raise TooManyBadChannelsError(
            f'Плохих каналов {len(bad)} из {rec.n_channels}: интерполировать не из чего'
        )
    good = [k for k in range(rec.n_channels) if k not in bad]
    matrix = spherical_spline_matrix(rec.channel_positions, good, bad)
    data = rec.data.copy()
    data[bad] = matrix @ rec.data[good]
    return rec.with_data(data)


def _fir(spec: tuple, kind: FilterKind, rate: float):
    cutoff, order, window = spec
    return design_fir(kind, cutoff, order, window, rate)


def analysis_windows(rec: EegRecording, exclude: Sequence[int] = ()) -> np.ndarray:
    """Аналитическая копия, нарезанная на 1-с окна: окна × каналы × отсчёты."""
    keep = [k for k in range(rec.n_channels) if k not in set(exclude)]
    data = rec.data[keep]
    data = fir_filter_array(
        _fir(EEG_ANALYSIS_LOWPASS, FilterKind.lowpass, rec.rate).taps, data
    )
    data = resample_array(data, rec.rate, EEG_ANALYSIS_RATE)
    data = fir_filter_array(
        _fir(EEG_ANALYSIS_HIGHPASS, FilterKind.highpass, EEG_ANALYSIS_RATE).taps, data
    )
    size = int(round(REJECT_EPOCH_S * EEG_ANALYSIS_RATE))
    count = data.shape[1] // size
    windows = data[:, : count * size].reshape(len(keep), count, size)
    return windows.transpose(1, 0, 2)


def final_filter(rec: EegRecording) -> EegRecording:
    data = fir_filter_array(
        _fir(EEG_FINAL_LOWPASS, FilterKind.lowpass, rec.rate).taps, rec.data
    )
    data = fir_filter_array(
        _fir(EEG_FINAL_HIGHPASS, FilterKind.highpass, rec.rate).taps, data
    )
    return rec.with_data(data)


def epoch_windows(
    spans: Sequence[tuple[float, float]], rate: float, n_samples: int
) -> list[tuple[int, int]]:
    """Границы триалов (смещение, длительность в с) в отсчётах записи.

    Выход триала за конец записи — ошибка рассогласования манифеста.
    """
    windows = []
    for index, (offset_s, duration_s) in enumerate(spans):
        start = int(round(offset_s * rate))
        stop = start + int(round(duration_s * rate))
        if stop > n_samples:
            raise ManifestMismatchError(
                f'Триал #{index} ({offset_s}+{duration_s} с) '
                f'выходит за запись ({n_samples / rate:.2f} с)'
            )
        windows.append((start, stop))
    return windows


def _overlaps(flags: np.ndarray, start_s: float, stop_s: float) -> bool:
    hits = np.flatnonzero(flags) * REJECT_EPOCH_S
    return bool(np.any((hits < stop_s) & (hits + REJECT_EPOCH_S > start_s)))


def _rejection_report(
    amplitude: np.ndarray, kurtosis: np.ndarray, trials: Sequence[TrialEntry]
) -> list[dict]:
    rows = []
    for index in np.flatnonzero(amplitude | kurtosis):
        start_s = index * REJECT_EPOCH_S
        owner = next(
            (
                t.trial_id
                for t in trials
                if t.eeg_offset_s <= start_s < t.eeg_offset_s + t.duration_s
            ),
            '',
        )
        reason = '+'.join(
            name
            for name, flags in (('amplitude', amplitude), ('kurtosis', kurtosis))
            if flags[index]
        )
        rows.append(
            {
                'epoch_index': int(index),
                'start_s': start_s,
                'trial_id': owner,
                'reason': reason,
            }
        )
    return rows


def _epoch_spans(
    duration_s: float, trials: Sequence[TrialEntry] | None
) -> list[tuple[float, float]]:
    if trials is None:
        count = int(duration_s // EPOCH_S)
        return [(k * float(EPOCH_S), float(EPOCH_S)) for k in range(count)]
    return [(t.eeg_offset_s, t.duration_s) for t in trials]


def _empty_result(rec: EegRecording, shortest_s: float) -> PreprocResult:
    """Запись короче триала: фильтры не применяются, эпох нет."""
    logger.warning(
        'Запись {dur:.1f} с короче одного триала: эпох нет',
        dur=rec.n_samples / rec.rate,
    )
    cleaned = rereference_common_average(rec)
    cleaned = cleaned.with_data(
        resample_array(cleaned.data, cleaned.rate, ENVELOPE_RATE), ENVELOPE_RATE
    )
    epoch_len = int(round(shortest_s * ENVELOPE_RATE))
    no_flags = np.zeros(0, dtype=bool)
    return PreprocResult(
        epochs=EpochSet(
            epochs=np.zeros((0, rec.n_channels, epoch_len)),
            rate=ENVELOPE_RATE,
            epoch_s=epoch_len / ENVELOPE_RATE,
            rejection_mask=no_flags,
            trial_meta=(),
        ),
        continuous=cleaned,
        bad_channels=[],
        window_amplitude=no_flags,
        window_kurtosis=no_flags.copy(),
        report=[],
    )


def preprocess_pipeline(
    rec: EegRecording,
    trials: Sequence[TrialEntry] | None = None,
    mask_kurtosis: bool = True,
) -> PreprocResult:
    """Полная цепочка препроцессинга.

    Без манифеста запись режется на последовательные 30-с эпохи. Маска 30-с
    эпохи ставится, если она пересекает 1-с окно, отбракованное по амплитуде
    или по эксцессу (последнее отключается `mask_kurtosis=False`); в отчёт
    попадают оба вида флагов. Запись короче триала даёт пустой набор эпох.
    """
    shortest_s = min(
        (dur for _, dur in _epoch_spans(rec.n_samples / rec.rate, trials)),
        default=float(EPOCH_S),
    )
    if rec.n_samples < int(round(shortest_s * rec.rate)):
        return _empty_result(rec, shortest_s)

    bad = detect_bad_channels(rec)
    if bad:
        logger.info(
            'Плохие каналы: {labels}', labels=[rec.channel_labels[k] for k in bad]
        )
    windows = analysis_windows(rec, exclude=bad)
    if len(windows):
        amplitude, kurtosis = epoch_rejection_flags(windows)
    else:
        amplitude = kurtosis = np.zeros(0, dtype=bool)
    logger.info(
        '1-с окон {n}: по амплитуде {amp}, по эксцессу {kurt}',
        n=len(windows),
        amp=int(amplitude.sum()),
        kurt=int(kurtosis.sum()),
    )

    cleaned = final_filter(rec)
    cleaned = rereference_common_average(cleaned, exclude=bad)
    cleaned = spherical_interpolate(cleaned, bad)
    cleaned = cleaned.with_data(
        resample_array(cleaned.data, cleaned.rate, ENVELOPE_RATE), ENVELOPE_RATE
    )

    n_samples = cleaned.n_samples
    spans = _epoch_spans(n_samples / ENVELOPE_RATE, trials)
    trials = trials or ()
    shortest_s = min((dur for _, dur in spans), default=float(EPOCH_S))
    if n_samples < int(round(shortest_s * ENVELOPE_RATE)):
        logger.warning(
            'Запись {dur:.1f} с короче одного триала: эпох нет',
            dur=n_samples / ENVELOPE_RATE,
        )
        spans, trials = [], ()
    bounds = epoch_windows(spans, ENVELOPE_RATE, n_samples)
    lengths = {stop - start for start, stop in bounds}
    if len(lengths) > 1:
        raise ManifestMismatchError(f'Триалы разной длины: {sorted(lengths)}')

    mask_flags = amplitude | kurtosis if mask_kurtosis else amplitude
    mask = np.array(
        [_overlaps(mask_flags, offset, offset + dur) for offset, dur in spans],
        dtype=bool,
    )
    epoch_len = lengths.pop() if lengths else int(round(EPOCH_S * ENVELOPE_RATE))
    epochs = (
        np.stack([cleaned.data[:, start:stop] for start, stop in bounds])
        if bounds
        else np.zeros((0, cleaned.n_channels, epoch_len))
    )
    logger.info('Эпох {n}, отбраковано {rej}', n=len(epochs), rej=int(mask.sum()))
    return PreprocResult(
        epochs=EpochSet(
            epochs=epochs,
            rate=ENVELOPE_RATE,
            epoch_s=epoch_len / ENVELOPE_RATE,
            rejection_mask=mask,
            trial_meta=tuple(trials),
        ),
        continuous=cleaned,
        bad_channels=bad,
        window_amplitude=amplitude,
        window_kurtosis=kurtosis,
        report=_rejection_report(amplitude, kurtosis, trials),
    )
