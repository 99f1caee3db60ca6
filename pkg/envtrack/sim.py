"""Синтетическая прямая модель: огибающая → ядро каналы × лаги → ЭЭГ + шум.

Ядро и SNR известны, поэтому точность декодера можно проверять количественно.
Вся случайность триала выводится из (seed, trial_id), и параллельная генерация
не меняет результат.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from envtrack.constants import (
    CONDITION_LEVELS,
    EEG_RAW_RATE,
    ENVELOPE_RATE,
    LAG_STEP_MS,
    NOISE_LEVELS,
    STANDARD_MONTAGE_24,
    SWEEP_MAX_LAG_MS,
    Condition,
    Noise,
)
from envtrack.decoder import TrialPair
from envtrack.eegprep import EegRecording, montage_positions
from envtrack.envelope import EnvelopeSeries
from envtrack.exceptions import InputValidationError
from envtrack.formats import save_manifest, write_signal
from envtrack.logging import logger
from envtrack.schemas import (
    CellSpec,
    ManifestMetadata,
    SimSpec,
    TrialEntry,
    TrialManifest,
)
from envtrack.utils import derive_rng, parallel_map

# Доля мощности шума, общая для всех каналов (розовый шум).
SHARED_NOISE_FRACTION = 0.2
GABOR_SIGMA_MS = 60.0
GABOR_FREQUENCY_HZ = 2.0


class SimError(InputValidationError):
    pass


class SnrUndefinedError(SimError):
    pass


Seed = int | np.random.Generator


@dataclass(frozen=True, eq=False)
class ForwardKernel:
    """Отклик каналов (мкВ на единицу огибающей) по лагам сетки 64 Гц."""

    weights: np.ndarray
    peak_lag_ms: float = 250.0
    rate: float = ENVELOPE_RATE

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2:
            raise SimError(f'Ядро должно быть каналы × лаги, shape={weights.shape}')
        if not np.all(np.isfinite(weights)):
            raise SimError('Ядро содержит NaN/inf')
        object.__setattr__(self, 'weights', weights)

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_lags(self) -> int:
        return self.weights.shape[1]

    @property
    def is_null(self) -> bool:
        return not np.any(self.weights)

    @property
    def lag_ms(self) -> np.ndarray:
        return np.arange(self.n_lags) * 1000 / self.rate

    def scaled(self, gain: float) -> 'ForwardKernel':
        return ForwardKernel(self.weights * gain, self.peak_lag_ms, self.rate)


def _sweep_lag_count(rate: float = ENVELOPE_RATE) -> int:
    return int(np.floor(SWEEP_MAX_LAG_MS * rate / 1000)) + 1


def spatial_loading(n_channels: int, rng: Seed) -> np.ndarray:
    """Случайная пространственная нагрузка с единичной нормой."""
    loading = np.random.default_rng(rng).standard_normal(n_channels)
    return loading / np.linalg.norm(loading)


def gabor_kernel(
    loading: np.ndarray,
    peak_lag_ms: float = 250.0,
    n_lags: int | None = None,
    rate: float = ENVELOPE_RATE,
) -> ForwardKernel:
    """Временной профиль Габора с максимумом на `peak_lag_ms`."""
    n_lags = n_lags or _sweep_lag_count(rate)
    t = np.arange(n_lags) * 1000 / rate - peak_lag_ms
    temporal = np.exp(-(t**2) / (2 * GABOR_SIGMA_MS**2)) * np.cos(
        2 * np.pi * GABOR_FREQUENCY_HZ * t / 1000
    )
    return ForwardKernel(np.outer(loading, temporal), peak_lag_ms, rate)


def single_lag_kernel(
    loading: np.ndarray,
    peak_lag_ms: float = 250.0,
    n_lags: int | None = None,
    rate: float = ENVELOPE_RATE,
) -> ForwardKernel:
    """Отклик только на одном лаге (250 мс -> индекс 16 на 64 Гц)."""
    n_lags = n_lags or _sweep_lag_count(rate)
    index = int(round(peak_lag_ms * rate / 1000))
    if not 0 <= index < n_lags:
        raise SimError(f'Лаг {peak_lag_ms} мс вне ядра из {n_lags} лагов')
    weights = np.zeros((loading.size, n_lags))
    weights[:, index] = loading
    return ForwardKernel(weights, index * LAG_STEP_MS, rate)


def null_kernel(
    n_channels: int, n_lags: int | None = None, rate: float = ENVELOPE_RATE
) -> ForwardKernel:
    return ForwardKernel(np.zeros((n_channels, n_lags or _sweep_lag_count(rate))), 0.0)


def kernel_for_cell(cell: CellSpec, loading: np.ndarray) -> ForwardKernel:
    if cell.kernel == 'gabor':
        kernel = gabor_kernel(loading, cell.peak_lag_ms)
    elif cell.kernel == 'single_lag':
        kernel = single_lag_kernel(loading, cell.peak_lag_ms)
    else:
        kernel = null_kernel(loading.size)
    return kernel


def gen_envelope(
    duration_s: float, seed: Seed, rate: float = ENVELOPE_RATE
) -> EnvelopeSeries:
    """Суррогат огибающей: гауссов шум в полосе 1–10 Гц, сдвинутый в ≥ 0.

    Дисперсия единичная, минимум ровно 0.
    """
    if duration_s < 1:
        raise SimError(f'Длительность огибающей должна быть ≥ 1 с: {duration_s}')
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    pad = int(2 * rate)
    sos = sps.butter(4, [1.0, 10.0], btype='bandpass', fs=rate, output='sos')
    band = sps.sosfiltfilt(sos, rng.standard_normal(n + 2 * pad))[pad : pad + n]
    shifted = band - band.min()
    return EnvelopeSeries(shifted / shifted.std(), rate, source_id='sim')


def pink_noise(n: int, rng: Seed) -> np.ndarray:
    """Шум 1/f единичной дисперсии (формирование спектра белого шума)."""
    rng = np.random.default_rng(rng)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = 1 / np.sqrt(freqs[1:])
    pink = np.fft.irfft(spectrum * scale, n)
    return pink / pink.std()


def forward_signal(envelope: np.ndarray, kernel: ForwardKernel) -> np.ndarray:
    """eeg[c][t] = Σ_ℓ kernel[c][ℓ] · env[t − ℓ] (причинная свёртка)."""
    envelope = np.asarray(envelope, dtype=float)
    if kernel.n_lags >= envelope.size:
        raise SimError(
            f'Ядро ({kernel.n_lags} лагов) не короче эпохи ({envelope.size} отсч.)'
        )
    return np.stack([sps.lfilter(row, [1.0], envelope) for row in kernel.weights])


def forward_components(
    envelope: np.ndarray,
    kernel: ForwardKernel,
    snr_db: float | None,
    rng: Seed,
    kernel_gain: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Сигнальная и шумовая части ЭЭГ по отдельности.

    Шум калибруется по ядру без `kernel_gain`: при фиксированном шуме удвоение
    усиления поднимает SNR на 6.02 дБ. Шум — 80 % независимого гауссова по
    каналам плюс 20 % общего розового.
    """
    rng = np.random.default_rng(rng)
    if snr_db is not None and kernel.is_null:
        raise SnrUndefinedError('SNR не определён для нулевого ядра')
    if snr_db is not None and not np.isfinite(snr_db):
        raise SimError(f'snr_db должен быть конечным: {snr_db}')
    signal = forward_signal(envelope, kernel)
    n_channels, n = signal.shape
    noise = np.sqrt(1 - SHARED_NOISE_FRACTION) * rng.standard_normal((n_channels, n))
    noise += np.sqrt(SHARED_NOISE_FRACTION) * pink_noise(n, rng)
    if snr_db is not None:
        signal_power = np.mean(signal**2, axis=1)
        # канал без сигнала получает шум среднего уровня по каналам
        signal_power = np.where(signal_power > 0, signal_power, signal_power.mean())
        target = signal_power / 10 ** (snr_db / 10)
        noise *= np.sqrt(target / np.mean(noise**2, axis=1))[:, None]
    return kernel_gain * signal, noise


def achieved_snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """10·log10 отношения средних мощностей сигнала и шума."""
    return float(10 * np.log10(np.mean(np.square(signal)) / np.mean(np.square(noise))))


def gen_trial(
    envelope: EnvelopeSeries | np.ndarray,
    kernel: ForwardKernel,
    snr_db: float | None,
    seed: Seed,
    condition: Condition = Condition.AV,
    noise: Noise = Noise.quiet,
    trial_id: str = 'sim',
    speaker_id: str = 'SP1',
    subject_id: str = 'S01',
    kernel_gain: float = 1.0,
) -> TrialPair:
    """Один триал: ЭЭГ каналы × отсчёты (64 Гц) и его огибающая.

    `snr_db=None` — только шум (допустимо лишь с нулевым ядром).
    """
    samples = envelope.samples if isinstance(envelope, EnvelopeSeries) else envelope
    signal, background = forward_components(
        samples, kernel, snr_db, seed, kernel_gain=kernel_gain
    )
    return TrialPair(
        eeg=signal + background,
        envelope=samples,
        condition=condition,
        noise=noise,
        speaker_id=speaker_id,
        trial_id=trial_id,
        subject_id=subject_id,
    )


def _cell_order(cell: CellSpec) -> tuple[int, int]:
    return NOISE_LEVELS.index(cell.noise), CONDITION_LEVELS.index(cell.condition)


def study_jobs(spec: SimSpec) -> list[tuple[str, CellSpec, str, str]]:
    """(subject_id, ячейка, trial_id, speaker_id) в детерминированном порядке."""
    jobs = []
    for s in range(spec.n_subjects):
        subject = f'S{s + 1:02d}'
        for cell in sorted(spec.cells, key=_cell_order):
            for k in range(spec.n_trials):
                tag = f'{cell.noise.value}-{cell.condition.value}'
                trial_id = f'{subject}-{tag}-{k + 1:03d}'
                speaker = f'SP{k % spec.n_speakers + 1}'
                jobs.append((subject, cell, trial_id, speaker))
    return jobs


def gen_condition_study(spec: SimSpec, threads: int | None = None) -> list[TrialPair]:
    """Триалы 2×4-плана: у каждого испытуемого своя пространственная нагрузка,
    у каждой ячейки — свои ядро и SNR.
    """
    loadings = {
        f'S{s + 1:02d}': spatial_loading(
            spec.channels, derive_rng(spec.seed, f'S{s + 1:02d}', 'loading')
        )
        for s in range(spec.n_subjects)
    }

    def make(job) -> TrialPair:
        subject, cell, trial_id, speaker = job
        kernel = kernel_for_cell(cell, loadings[subject])
        envelope = gen_envelope(spec.epoch_s, derive_rng(spec.seed, trial_id, 'env'))
        return gen_trial(
            envelope,
            kernel,
            cell.snr_db,
            derive_rng(spec.seed, trial_id, 'noise'),
            condition=cell.condition,
            noise=cell.noise,
            trial_id=trial_id,
            speaker_id=speaker,
            subject_id=subject,
            kernel_gain=cell.kernel_gain,
        )

    jobs = study_jobs(spec)
    trials = parallel_map(make, jobs, threads)
    logger.info(
        'Симуляция: {subjects} исп. × {cells} ячеек × {n} триалов',
        subjects=spec.n_subjects,
        cells=len(spec.cells),
        n=spec.n_trials,
    )
    return trials


def channel_labels(n_channels: int) -> list[str]:
    if n_channels == len(STANDARD_MONTAGE_24):
        return list(STANDARD_MONTAGE_24)
    return [f'E{k + 1}' for k in range(n_channels)]


def write_study(trials: Sequence[TrialPair], out_dir: Path) -> list[Path]:
    """Бинарные файлы ЭЭГ и огибающих плюс по манифесту на испытуемого."""
    out_dir = Path(out_dir)
    (out_dir / 'data').mkdir(parents=True, exist_ok=True)
    by_subject: dict[str, list[TrialEntry]] = {}
    for trial in trials:
        eeg_path = Path('data') / f'{trial.trial_id}.eeg.bin'
        env_path = Path('data') / f'{trial.trial_id}.env.bin'
        labels = channel_labels(trial.eeg.shape[0])
        positions = (
            montage_positions(labels)
            if trial.eeg.shape[0] == len(STANDARD_MONTAGE_24)
            else None
        )
        write_signal(out_dir / eeg_path, trial.eeg, ENVELOPE_RATE, labels, positions)
        write_signal(
            out_dir / env_path, trial.envelope[None, :], ENVELOPE_RATE, ['env']
        )
        by_subject.setdefault(trial.subject_id, []).append(
            TrialEntry(
                trial_id=trial.trial_id,
                speaker_id=trial.speaker_id,
                condition=trial.condition,
                noise=trial.noise,
                envelope_path=env_path,
                eeg_path=eeg_path,
                eeg_offset_s=0.0,
                duration_s=trial.envelope.size / ENVELOPE_RATE,
            )
        )
    paths = []
    for subject, entries in by_subject.items():
        path = out_dir / f'manifest_{subject}.json'
        save_manifest(
            TrialManifest(
                trials=entries, metadata=ManifestMetadata(subject_id=subject)
            ),
            path,
        )
        paths.append(path)
    logger.info('Записано {n} манифестов в {dir}', n=len(paths), dir=out_dir)
    return paths


def gen_raw_recording(
    duration_s: float,
    seed: Seed,
    rate: float = EEG_RAW_RATE,
    amplitude_uv: float = 10.0,
) -> EegRecording:
    """«Сырая» 24-канальная запись 500 Гц: фоновый шум с общей розовой частью."""
    rng = np.random.default_rng(seed)
    labels = list(STANDARD_MONTAGE_24)
    n = int(round(duration_s * rate))
    data = np.sqrt(1 - SHARED_NOISE_FRACTION) * rng.standard_normal((len(labels), n))
    data += np.sqrt(SHARED_NOISE_FRACTION) * pink_noise(n, rng)
    return EegRecording(
        data=amplitude_uv * data,
        rate=rate,
        channel_labels=tuple(labels),
        channel_positions=montage_positions(labels),
    )


def inject_spike(
    rec: EegRecording,
    channel: int,
    start_s: float,
    duration_s: float,
    amplitude_uv: float,
) -> EegRecording:
    """Добавить в канал выброс формы окна Ханна с пиком `amplitude_uv`."""
    if not 0 <= channel < rec.n_channels:
        raise SimError(f'Нет канала {channel}')
    start = int(round(start_s * rec.rate))
    length = int(round(duration_s * rec.rate))
    if length < 1 or start < 0 or start + length > rec.n_samples:
        raise SimError(f'Выброс {start_s}+{duration_s} с вне записи')
    data = rec.data.copy()
    data[channel, start : start + length] += amplitude_uv * sps.windows.hann(
        length, sym=True
    )
    return rec.with_data(data)
