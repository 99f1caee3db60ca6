"""Файловые форматы тулкита.

Бинарный сигнал: `<uint32 длина заголовка><JSON-заголовок UTF-8><float32 LE>`,
данные каналы × отсчёты построчно. Позиции электродов лежат рядом в
`<имя>.positions.json`. CSV начинаются строкой `# envtrack-csv v<N> <kind>`.
"""

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError
from scipy.io import wavfile

from envtrack.constants import CSV_SCHEMA_VERSION
from envtrack.exceptions import InputValidationError
from envtrack.logging import logger
from envtrack.schemas import (
    SignalHeader,
    SimSpec,
    SpeakerManifest,
    TrackingScore,
    TrialManifest,
)
from envtrack.sigcore import Signal

_HEADER_LEN = struct.Struct('<I')
_CSV_MAGIC = re.compile(r'^# envtrack-csv v(\d+) (\S+)$')


class SignalFileError(InputValidationError):
    pass


class TruncatedPayloadError(SignalFileError):
    pass


class UnsupportedWavError(InputValidationError):
    pass


class PgmFormatError(InputValidationError):
    pass


class FrameSizeError(InputValidationError):
    pass


class ManifestError(InputValidationError):
    pass


class CsvSchemaError(InputValidationError):
    pass


@dataclass(frozen=True, eq=False)
class SignalFile:
    data: np.ndarray
    rate: float
    labels: list[str]
    positions: np.ndarray | None = None

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]


# --- бинарный сигнал ---------------------------------------------------------


def positions_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.positions.json')


def write_signal(
    path: Path,
    data: np.ndarray,
    rate: float,
    labels: list[str] | None = None,
    positions: np.ndarray | None = None,
) -> None:
    """Записать матрицу (или одномерный ряд как один канал) в бинарный формат."""
    data = np.atleast_2d(np.asarray(data))
    n_channels, n_samples = data.shape
    labels = labels if labels is not None else [f'ch{k}' for k in range(n_channels)]
    header = SignalHeader(
        n_channels=n_channels, n_samples=n_samples, rate_hz=rate, labels=labels
    )
    header_bytes = header.model_dump_json().encode('utf-8')
    payload = np.ascontiguousarray(data, dtype='<f4').tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_HEADER_LEN.pack(len(header_bytes)) + header_bytes + payload)
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        sidecar = {label: list(pos) for label, pos in zip(labels, positions)}
        positions_path(path).write_text(json.dumps(sidecar, indent=2))


def read_signal(path: Path) -> SignalFile:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER_LEN.size:
        raise TruncatedPayloadError(f'{path}: файл короче префикса заголовка')
    (header_len,) = _HEADER_LEN.unpack_from(raw)
    header_end = _HEADER_LEN.size + header_len
    if len(raw) < header_end:
        raise TruncatedPayloadError(
            f'{path}: заголовок {header_len} байт, в файле {len(raw) - 4}'
        )
    try:
        header = SignalHeader.model_validate_json(raw[_HEADER_LEN.size : header_end])
    except ValidationError as exc:
        raise SignalFileError(f'{path}: некорректный заголовок: {exc}') from exc
    payload = raw[header_end:]
    if len(payload) < header.payload_bytes:
        raise TruncatedPayloadError(
            f'{path}: данные обрезаны: ожидалось {header.payload_bytes} байт, '
            f'получено {len(payload)}'
        )
    if len(payload) > header.payload_bytes:
        raise SignalFileError(
            f'{path}: данных больше заголовка: ожидалось {header.payload_bytes} '
            f'байт, получено {len(payload)}'
        )
    data = np.frombuffer(payload, dtype='<f4').reshape(
        header.n_channels, header.n_samples
    )
    positions = None
    sidecar = positions_path(path)
    if sidecar.exists():
        by_label = json.loads(sidecar.read_text())
        missing = [label for label in header.labels if label not in by_label]
        if missing:
            raise SignalFileError(f'{sidecar}: нет позиций для {missing}')
        positions = np.array([by_label[label] for label in header.labels], float)
    return SignalFile(
        data=data.astype(float),
        rate=header.rate_hz,
        labels=list(header.labels),
        positions=positions,
    )


def slice_seconds(
    data: np.ndarray, rate: float, offset_s: float, duration_s: float
) -> np.ndarray:
    """Вырезать [offset, offset + duration) по последней оси."""
    start = int(round(offset_s * rate))
    stop = start + int(round(duration_s * rate))
    if stop > data.shape[-1]:
        raise SignalFileError(
            f'Окно {offset_s}+{duration_s} с выходит за запись '
            f'({data.shape[-1] / rate:.3f} с)'
        )
    return data[..., start:stop]


# --- WAV и PGM ---------------------------------------------------------------


def read_wav(path: Path) -> Signal:
    """Первый канал PCM/float WAV, масштабированный в [−1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedWavError(f'{path}: {exc}') from exc
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        # 24-битный PCM scipy выравнивает по старшим битам int32
        samples = data / 2.0**31
    elif data.dtype == np.uint8:
        samples = (data.astype(float) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise UnsupportedWavError(
            f'{path}: неподдерживаемый тип отсчётов {data.dtype}'
        )
    return Signal(samples, float(rate))


def _pgm_header(raw: bytes, path: Path) -> tuple[int, int, int, int]:
    values = []
    pos = 2
    while len(values) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b'#':
            end = raw.find(b'\n', pos)
            if end < 0:
                raise PgmFormatError(f'{path}: заголовок PGM не завершён')
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PgmFormatError(f'{path}: ожидалось число в заголовке PGM')
        values.append(int(raw[start:pos]))
    width, height, maxval = values
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise PgmFormatError(f'{path}: некорректный заголовок {values}')
    # ровно один пробельный символ отделяет заголовок от растра
    return width, height, maxval, pos + 1


def read_pgm(path: Path) -> np.ndarray:
    """Кадр PGM (P5/P2) как матрица яркости в [0, 1]."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b'P5', b'P2'):
        raise PgmFormatError(f'{path}: не PGM (magic {magic!r})')
    width, height, maxval, offset = _pgm_header(raw, path)
    count = width * height
    if magic == b'P5':
        dtype = np.dtype('>u2') if maxval > 255 else np.dtype('u1')
        if len(raw) - offset < count * dtype.itemsize:
            raise PgmFormatError(f'{path}: растр обрезан')
        pixels = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    else:
        pixels = np.array(raw[offset - 1 :].split()[:count], dtype=int)
        if pixels.size < count:
            raise PgmFormatError(f'{path}: растр обрезан')
    return pixels.reshape(height, width).astype(float) / maxval


def read_pgm_frames(directory: Path) -> np.ndarray:
    """Все кадры каталога по имени файла: массив кадры × высота × ширина."""
    paths = sorted(Path(directory).glob('*.pgm'))
    if not paths:
        raise PgmFormatError(f'{directory}: нет кадров *.pgm')
    frames = [read_pgm(path) for path in paths]
    shape = frames[0].shape
    for path, frame in zip(paths, frames):
        if frame.shape != shape:
            raise FrameSizeError(f'{path}: размер {frame.shape}, ожидался {shape}')
    return np.stack(frames)


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Записать кадр яркости [0, 1] как 8-битный P5."""
    pixels = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype('u1')
    height, width = pixels.shape
    Path(path).write_bytes(
        f'P5\n{width} {height}\n255\n'.encode('ascii') + pixels.tobytes()
    )


# --- манифесты ---------------------------------------------------------------


def _load_model(path: Path, model: type[BaseModel]):
    path = Path(path)
    try:
        return model.model_validate_json(path.read_text(encoding='utf-8'))
    except ValidationError as exc:
        raise ManifestError(f'{path}: {exc}') from exc


def _resolve(base: Path, value: Path | None) -> Path | None:
    if value is None or value.is_absolute():
        return value
    return base / value


def load_manifest(path: Path, check_files: bool = True) -> TrialManifest:
    """Прочитать манифест, разрешив относительные пути от его каталога."""
    path = Path(path)
    manifest = _load_model(path, TrialManifest)
    base = path.parent
    trials = []
    for trial in manifest.trials:
        trial = trial.model_copy(
            update={
                'audio_path': _resolve(base, trial.audio_path),
                'envelope_path': _resolve(base, trial.envelope_path),
                'eeg_path': _resolve(base, trial.eeg_path),
            }
        )
        if check_files:
            for field in ('audio_path', 'envelope_path', 'eeg_path'):
                value = getattr(trial, field)
                if value is not None and not value.exists():
                    raise ManifestError(
                        f'{path}: триал {trial.trial_id}: файл {value} не найден'
                    )
        trials.append(trial)
    return manifest.model_copy(update={'trials': trials})


def save_manifest(manifest: TrialManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2), encoding='utf-8')


def load_speaker_manifest(path: Path) -> SpeakerManifest:
    path = Path(path)
    manifest = _load_model(path, SpeakerManifest)
    recordings = [
        rec.model_copy(
            update={
                'audio_path': _resolve(path.parent, rec.audio_path),
                'frames_dir': _resolve(path.parent, rec.frames_dir),
            }
        )
        for rec in manifest.recordings
    ]
    return manifest.model_copy(update={'recordings': recordings})


def load_sim_spec(path: Path) -> SimSpec:
    return _load_model(path, SimSpec)


# --- версионированные CSV ----------------------------------------------------


def write_table(frame: pd.DataFrame, path: Path, kind: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as fh:
        fh.write(f'# envtrack-csv v{CSV_SCHEMA_VERSION} {kind}\n')
        frame.to_csv(fh, index=False, lineterminator='\n')
    logger.debug(
        'CSV {kind}: {rows} строк -> {path}', kind=kind, rows=len(frame), path=path
    )


def read_table(
    path: Path, kind: str | tuple[str, ...], dtype: dict | None = None
) -> pd.DataFrame:
    path = Path(path)
    kinds = (kind,) if isinstance(kind, str) else kind
    with path.open(encoding='utf-8') as fh:
        first = fh.readline().rstrip('\r\n')
    match = _CSV_MAGIC.match(first)
    if match is None:
        raise CsvSchemaError(f'{path}: нет строки версии схемы envtrack-csv')
    version, found = int(match.group(1)), match.group(2)
    if version != CSV_SCHEMA_VERSION:
        raise CsvSchemaError(f'{path}: неизвестная версия схемы v{version}')
    if found not in kinds:
        raise CsvSchemaError(f'{path}: таблица {found!r}, ожидалась {kinds}')
    return pd.read_csv(path, skiprows=1, dtype=dtype)


def scores_frame(scores: list[TrackingScore]) -> pd.DataFrame:
    columns = list(TrackingScore.model_fields)
    rows = [score.model_dump(mode='json') for score in scores]
    return pd.DataFrame(rows, columns=columns)


def write_scores(scores: list[TrackingScore], path: Path) -> None:
    write_table(scores_frame(scores), path, 'scores')


def read_scores(path: Path) -> list[TrackingScore]:
    text_columns = ('trial_id', 'subject_id', 'speaker_id', 'lag_or_window')
    frame = read_table(path, 'scores', dtype=dict.fromkeys(text_columns, str))
    frame['speaker_id'] = frame['speaker_id'].fillna('').astype(str)
    try:
        return [TrackingScore.model_validate(row) for row in frame.to_dict('records')]
    except ValidationError as exc:
        raise CsvSchemaError(f'{path}: {exc}') from exc
