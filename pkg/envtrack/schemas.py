import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from envtrack.constants import (
    ENVELOPE_BUTTER_ORDER,
    ENVELOPE_LOWPASS_HZ,
    ENVELOPE_RATE,
    EPOCH_S,
    GAMMATONE_BANDS,
    GAMMATONE_FMAX_HZ,
    GAMMATONE_FMIN_HZ,
    Condition,
    Noise,
)

# r = ±1 (совпадающие триалы без шума) даёт бесконечный z; храним atanh от r,
# прижатого к этому порогу.
R_Z_CLIP = 1 - 1e-12


def clipped_fisher_z(r: float) -> float:
    return math.atanh(min(max(r, -R_Z_CLIP), R_Z_CLIP))


class TrialEntry(BaseModel):
    """Один 30-секундный триал манифеста.

    Стимул задаётся либо аудио (огибающая считается на лету), либо готовой
    огибающей 64 Гц. Пути относительные — от каталога манифеста.
    """

    trial_id: str = Field(min_length=1)
    speaker_id: str = Field(min_length=1)
    condition: Condition
    noise: Noise
    audio_path: Path | None = None
    envelope_path: Path | None = None
    eeg_path: Path
    eeg_offset_s: float = Field(default=0.0, ge=0)
    duration_s: float = Field(default=float(EPOCH_S), gt=0)
    # Заполняется командой preproc: триал пересекается с отбракованной секундой.
    rejected: bool = False

    @model_validator(mode='after')
    def check_stimulus(self):
        if self.audio_path is None and self.envelope_path is None:
            raise ValueError(
                f'Триал {self.trial_id}: нужен audio_path или envelope_path'
            )
        return self


class ManifestMetadata(BaseModel):
    model_config = ConfigDict(extra='allow')

    subject_id: str = 'S01'
    # Оценки симпатии дикторов переносятся как есть и в расчётах не участвуют.
    likeability_ratings: Any = None


class TrialManifest(BaseModel):
    trials: list[TrialEntry] = Field(min_length=1)
    metadata: ManifestMetadata = Field(default_factory=ManifestMetadata)

    @field_validator('trials')
    @classmethod
    def check_unique_ids(cls, trials: list[TrialEntry]) -> list[TrialEntry]:
        seen = set()
        for trial in trials:
            if trial.trial_id in seen:
                raise ValueError(f'Повторяющийся trial_id: {trial.trial_id}')
            seen.add(trial.trial_id)
        return trials


class SignalHeader(BaseModel):
    """JSON-заголовок бинарного файла сигнала."""

    n_channels: int = Field(ge=1)
    n_samples: int = Field(ge=1)
    rate_hz: float = Field(gt=0)
    labels: list[str]
    dtype: Literal['f32le'] = 'f32le'

    @model_validator(mode='after')
    def check_labels(self):
        if len(self.labels) != self.n_channels:
            raise ValueError(
                f'Меток {len(self.labels)}, а каналов {self.n_channels}'
            )
        return self

    @property
    def payload_bytes(self) -> int:
        return 4 * self.n_channels * self.n_samples


class TrackingScore(BaseModel):
    """Точность реконструкции огибающей для одного отложенного триала."""

    trial_id: str
    subject_id: str = 'S01'
    speaker_id: str = ''
    condition: Condition
    noise: Noise
    # '250.0' для однолаговой модели, '200:325' для окна.
    lag_or_window: str
    ridge_lambda: float = Field(ge=0)
    r: float = Field(ge=-1, le=1)
    r_z: float
    mse: float = Field(ge=0)

    @model_validator(mode='after')
    def check_r_z(self):
        expected = clipped_fisher_z(self.r)
        if not math.isclose(self.r_z, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f'r_z={self.r_z} не равен atanh(r)={expected}')
        return self


class LipRoi(BaseModel):
    """Прямоугольник губ в кадре, пиксели (x — столбец, y — строка)."""

    x: int = Field(ge=0)
    y: int = Field(ge=0)
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class SpeakerRecording(BaseModel):
    speaker_id: str = Field(min_length=1)
    audio_path: Path
    # Каталог кадров PGM (25 fps), синхронных с аудио.
    frames_dir: Path | None = None
    roi: LipRoi | None = None

    @model_validator(mode='after')
    def check_roi(self):
        if self.frames_dir is not None and self.roi is None:
            raise ValueError(f'Диктор {self.speaker_id}: для кадров нужен roi')
        return self


class SpeakerManifest(BaseModel):
    recordings: list[SpeakerRecording] = Field(min_length=1)
    segment_s: float = Field(default=float(EPOCH_S), gt=0)


class EnvelopeConfig(BaseModel):
    """Параметры извлечения широкополосной огибающей."""

    n_bands: int = Field(default=GAMMATONE_BANDS, ge=2)
    fmin_hz: float = Field(default=GAMMATONE_FMIN_HZ, gt=0)
    fmax_hz: float = Field(default=GAMMATONE_FMAX_HZ, gt=0)
    lowpass_hz: float = Field(default=ENVELOPE_LOWPASS_HZ, gt=0)
    butter_order: int = Field(default=ENVELOPE_BUTTER_ORDER, ge=1)
    output_rate: float = Field(default=float(ENVELOPE_RATE), gt=0)
    # 2·fmax плюс запас на спад верхней полосы.
    min_audio_rate: float = Field(default=14_000.0, gt=0)

    @model_validator(mode='after')
    def check_bands(self):
        if self.fmin_hz >= self.fmax_hz:
            raise ValueError(f'fmin_hz={self.fmin_hz} >= fmax_hz={self.fmax_hz}')
        if self.lowpass_hz >= self.output_rate / 2:
            raise ValueError('Частота НЧ-фильтра выше Найквиста выходной частоты')
        return self


class CellSpec(BaseModel):
    """Одна ячейка 2×4-плана симуляции.

    `snr_db=None` означает «только шум» и допустимо только с нулевым ядром.
    """

    condition: Condition
    noise: Noise
    snr_db: float | None = 0.0
    kernel: Literal['gabor', 'single_lag', 'null'] = 'gabor'
    peak_lag_ms: float = Field(default=250.0, ge=0)
    # Множитель пространственной нагрузки ядра (для проверки линейности мощности).
    kernel_gain: float = Field(default=1.0, gt=0)

    @model_validator(mode='after')
    def check_noise_only(self):
        if self.snr_db is None and self.kernel != 'null':
            raise ValueError('snr_db=None (только шум) требует kernel="null"')
        if self.snr_db is not None and self.kernel == 'null':
            raise ValueError('SNR не определён для нулевого ядра: задайте snr_db=None')
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValueError(f'snr_db должен быть конечным: {self.snr_db}')
        return self

    @property
    def key(self) -> tuple[Noise, Condition]:
        return self.noise, self.condition


class SimSpec(BaseModel):
    n_trials: int = Field(default=10, ge=1, description='Триалов на ячейку')
    epoch_s: float = Field(default=float(EPOCH_S), ge=1)
    channels: int = Field(default=24, ge=2)
    cells: list[CellSpec] = Field(min_length=1)
    seed: int = 0
    n_subjects: int = Field(default=1, ge=1)
    n_speakers: int = Field(default=6, ge=1)

    @field_validator('cells')
    @classmethod
    def check_unique_cells(cls, cells: list[CellSpec]) -> list[CellSpec]:
        keys = [cell.key for cell in cells]
        if len(set(keys)) != len(keys):
            raise ValueError('Ячейки (noise, condition) повторяются')
        return cells


class TestResult(BaseModel):
    """Строка таблицы плановых сравнений."""

    __test__ = False  # не тест-класс для pytest

    label: str
    statistic: float
    df: float = Field(gt=0)
    p_raw: float = Field(ge=0, le=1)
    p_adjusted: float = Field(ge=0, le=1)
    effect_size: float

    @model_validator(mode='after')
    def check_adjusted(self):
        if self.p_adjusted < self.p_raw:
            raise ValueError(f'{self.label}: p_adjusted < p_raw')
        return self


class AnovaEffect(BaseModel):
    """Эффект RM-ANOVA; df и p — с поправкой Гринхауса–Гейссера."""

    effect: str
    F: float = Field(ge=0)
    df_num: float = Field(gt=0)
    df_den: float = Field(gt=0)
    df_num_uncorrected: int = Field(ge=1)
    df_den_uncorrected: int = Field(ge=1)
    epsilon: float = Field(gt=0, le=1)
    p: float = Field(ge=0, le=1)
    p_uncorrected: float = Field(ge=0, le=1)
    eta_squared: float = Field(ge=0, le=1)
