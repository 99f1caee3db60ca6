"""Признаки 30-секундных сегментов и профили дикторов.

Профиль — среднее признаков по сегментам диктора, нормированное min-max по
набору дикторов и прореженное по корреляции в объявленном порядке признаков.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from envtrack.constants import (
    FEATURE_AUDIO_RATE,
    FEATURE_ORDER,
    JITTER_FEATURES,
    LIP_VIDEO_FPS,
    PITCH_FEATURES,
    PROFILE_MAX_ABS_R,
    SHIMMER_FEATURES,
    VISUAL_FEATURES,
)
from envtrack.exceptions import InputValidationError
from envtrack.features.spectral import (
    band_periodic_power,
    multitaper_psd,
    periodic_fraction,
)
from envtrack.features.visual import lip_features
from envtrack.features.voice import (
    TooFewPeriodsError,
    extract_glottal_cycles,
    harmonicity,
    jitter_metrics,
    min_intensity,
    pitch_statistics,
    pitch_track,
    shimmer_metrics,
)
from envtrack.formats import read_pgm_frames, read_wav
from envtrack.logging import logger
from envtrack.schemas import LipRoi, SpeakerManifest
from envtrack.sigcore import Signal, resample
from envtrack.stats import StatisticUndefinedError, pearson_r
from envtrack.utils import parallel_map


class ProfileInputError(InputValidationError):
    pass


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    features: dict[str, float]
    normalized: bool


@dataclass(frozen=True, eq=False)
class ProfileSet:
    """Профили дикторов: средние, нормированные и причины отбраковки признаков."""

    means: pd.DataFrame
    normalized: pd.DataFrame
    dropped: dict[str, str] = field(default_factory=dict)

    @property
    def retained(self) -> list[str]:
        return list(self.normalized.columns)

    def profiles(self) -> list[SpeakerProfile]:
        return [
            SpeakerProfile(str(speaker), row.to_dict(), normalized=True)
            for speaker, row in self.normalized.iterrows()
        ]

    def radar_frame(self) -> pd.DataFrame:
        """Длинная таблица (feature, speaker_id, value) для радарной диаграммы."""
        long = self.normalized.reset_index().melt(
            id_vars='speaker_id', var_name='feature', value_name='value'
        )
        return long[['feature', 'speaker_id', 'value']]


def _nan_features(names) -> dict[str, float]:
    return dict.fromkeys(names, float('nan'))


def segment_features(
    audio: Signal,
    frames: np.ndarray | None = None,
    roi: LipRoi | None = None,
    label: str = '',
) -> dict[str, float]:
    """Полный набор признаков одного сегмента в порядке FEATURE_ORDER.

    Спектральный анализ идёт на аудио, передискретизированном в 10 кГц, голосовые
    метрики — на исходной частоте. Неопределённые метрики (невокализованный
    сегмент, мало циклов, нет видео) становятся NaN с предупреждением.
    """
    features = {}
    spectral_audio = resample(audio, FEATURE_AUDIO_RATE)
    ratio = periodic_fraction(multitaper_psd(spectral_audio))
    features.update(band_periodic_power(ratio, audio.duration_s))

    track = pitch_track(audio)
    pitch = pitch_statistics(track)
    if pitch is None:
        logger.warning('Сегмент {label}: нет вокализованных кадров', label=label)
        features.update(_nan_features(PITCH_FEATURES))
        features.update(_nan_features(JITTER_FEATURES + SHIMMER_FEATURES))
        features['mean_nhr'] = float('nan')
    else:
        features.update(pitch)
        cycles = extract_glottal_cycles(audio, track)
        try:
            features.update(jitter_metrics(cycles.periods_s))
        except TooFewPeriodsError as exc:
            logger.warning('Сегмент {label}: {exc}', label=label, exc=exc)
            features.update(_nan_features(JITTER_FEATURES))
        try:
            features.update(shimmer_metrics(cycles.amplitudes))
        except TooFewPeriodsError as exc:
            logger.warning('Сегмент {label}: {exc}', label=label, exc=exc)
            features.update(_nan_features(SHIMMER_FEATURES))
        features['mean_nhr'] = harmonicity(track)
    features['min_intensity'] = min_intensity(audio)

    if frames is not None and roi is not None:
        features.update(lip_features(frames, roi))
    else:
        features.update(_nan_features(VISUAL_FEATURES))
    return {name: features[name] for name in FEATURE_ORDER}


def split_segments(
    audio: Signal,
    frames: np.ndarray | None,
    segment_s: float,
    fps: float = LIP_VIDEO_FPS,
) -> list[tuple[Signal, np.ndarray | None]]:
    """Нарезка записи на целые сегменты; хвост короче сегмента отбрасывается."""
    per_segment = int(round(segment_s * audio.rate))
    frames_per_segment = int(round(segment_s * fps))
    n_segments = audio.samples.size // per_segment
    segments = []
    for k in range(n_segments):
        chunk = Signal(
            audio.samples[k * per_segment : (k + 1) * per_segment], audio.rate
        )
        video = None
        if frames is not None:
            video = frames[k * frames_per_segment : (k + 1) * frames_per_segment]
            if video.shape[0] == 0:
                video = None
        segments.append((chunk, video))
    return segments


def extract_speaker_features(
    manifest: SpeakerManifest, threads: int | None = None
) -> pd.DataFrame:
    """Таблица признаков: строка на сегмент (speaker_id, segment, признаки...)."""
    jobs = []
    for recording in manifest.recordings:
        audio = read_wav(recording.audio_path)
        frames = (
            read_pgm_frames(recording.frames_dir)
            if recording.frames_dir is not None
            else None
        )
        segments = split_segments(audio, frames, manifest.segment_s)
        if not segments:
            logger.warning(
                'Диктор {speaker}: запись {duration:.1f} с короче сегмента {seg} с',
                speaker=recording.speaker_id,
                duration=audio.duration_s,
                seg=manifest.segment_s,
            )
        for k, (chunk, video) in enumerate(segments):
            jobs.append((recording.speaker_id, k, chunk, video, recording.roi))
    logger.info('Признаки: {n} сегментов', n=len(jobs))

    def run(job) -> dict:
        speaker, k, chunk, video, roi = job
        row = segment_features(chunk, video, roi, label=f'{speaker}#{k}')
        return {'speaker_id': speaker, 'segment': k, **row}

    rows = parallel_map(run, jobs, threads)
    return pd.DataFrame(rows, columns=['speaker_id', 'segment', *FEATURE_ORDER])


def _feature_columns(frame: pd.DataFrame) -> list[str]:
    declared = [name for name in FEATURE_ORDER if name in frame.columns]
    extra = [
        name
        for name in frame.columns
        if name not in declared and name not in ('speaker_id', 'segment')
    ]
    return declared + extra


def normalize_features(means: pd.DataFrame) -> tuple[pd.DataFrame, dict[str, str]]:
    """Min-max по дикторам; неполные и постоянные признаки отбрасываются."""
    normalized = {}
    dropped = {}
    for name in means.columns:
        values = means[name].to_numpy(dtype=float)
        if np.any(~np.isfinite(values)):
            dropped[name] = 'incomplete'
        elif np.ptp(values) == 0:
            dropped[name] = 'constant'
        else:
            normalized[name] = (values - values.min()) / np.ptp(values)
            continue
        logger.warning(
            'Признак {name} отброшен: {reason}', name=name, reason=dropped[name]
        )
    return pd.DataFrame(normalized, index=means.index), dropped


def prune_correlated(
    normalized: pd.DataFrame, max_abs_r: float = PROFILE_MAX_ABS_R
) -> tuple[pd.DataFrame, dict[str, str]]:
    """Жадное прореживание: признак выбывает, если |r| > max_abs_r с уже оставленным."""
    retained = []
    dropped = {}
    for name in normalized.columns:
        for kept in retained:
            try:
                r = pearson_r(normalized[name].to_numpy(), normalized[kept].to_numpy())
            except StatisticUndefinedError:
                continue
            if abs(r) > max_abs_r:
                dropped[name] = f'|r|={abs(r):.3f} с {kept}'
                logger.info(
                    'Признак {name} коррелирует с {kept}: r={r:.3f}',
                    name=name,
                    kept=kept,
                    r=r,
                )
                break
        else:
            retained.append(name)
    return normalized[retained], dropped


def build_profiles(
    segment_frame: pd.DataFrame, max_abs_r: float = PROFILE_MAX_ABS_R
) -> ProfileSet:
    """Средние по сегментам → min-max по дикторам → прореживание по корреляции."""
    if 'speaker_id' not in segment_frame.columns:
        raise ProfileInputError('Нет столбца speaker_id')
    columns = _feature_columns(segment_frame)
    frame = segment_frame.assign(speaker_id=segment_frame['speaker_id'].astype(str))
    means = frame.groupby('speaker_id', sort=True)[columns].mean()
    if len(means) < 2:
        raise ProfileInputError(
            f'Для нормировки нужно ≥ 2 дикторов, есть {len(means)}'
        )
    normalized, dropped = normalize_features(means)
    pruned, correlated = prune_correlated(normalized, max_abs_r)
    logger.info(
        'Профили: {speakers} дикторов, оставлено {kept} из {total} признаков',
        speakers=len(means),
        kept=pruned.shape[1],
        total=len(columns),
    )
    return ProfileSet(means=means, normalized=pruned, dropped=dropped | correlated)
