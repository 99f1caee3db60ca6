"""Команды envelope и preproc: подготовка стимулов и очистка ЭЭГ."""

import argparse
from pathlib import Path

import pandas as pd

from envtrack.commands import CliArgumentError
from envtrack.constants import ENVELOPE_LOWPASS_HZ, GAMMATONE_BANDS
from envtrack.eegprep import EegRecording, preprocess_pipeline
from envtrack.envelope import EnvelopeSeries, envelope_from_wav
from envtrack.formats import (
    load_manifest,
    read_signal,
    save_manifest,
    write_signal,
    write_table,
)
from envtrack.logging import logger
from envtrack.schemas import EnvelopeConfig, TrialEntry

REJECTION_COLUMNS = ['recording', 'epoch_index', 'start_s', 'trial_id', 'reason']


def _bin_name(path: Path, suffix: str) -> str:
    return f'{Path(path).name.removesuffix(".bin")}.{suffix}.bin'


def write_envelope(envelope: EnvelopeSeries, path: Path) -> None:
    write_signal(path, envelope.samples[None, :], envelope.rate, ['env'])


def _envelope_config(args: argparse.Namespace) -> EnvelopeConfig:
    return EnvelopeConfig(n_bands=args.n_bands, lowpass_hz=args.lowpass_hz)


def run_envelope(args: argparse.Namespace) -> None:
    config = _envelope_config(args)
    if args.audio is not None:
        if args.out is None:
            raise CliArgumentError('envelope --audio требует --out')
        envelope = envelope_from_wav(args.audio, config, args.threads)
        write_envelope(envelope, args.out)
        logger.info(
            'Огибающая {source}: {dur:.1f} с -> {path}',
            source=envelope.source_id,
            dur=envelope.duration_s,
            path=args.out,
        )
        return
    if args.manifest is None or args.out_dir is None:
        raise CliArgumentError('Нужно --audio/--out или --manifest/--out-dir')

    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    written: dict[Path, Path] = {}
    trials = []
    for trial in manifest.trials:
        if trial.audio_path is None:
            trials.append(trial)
            continue
        if trial.audio_path not in written:
            relative = Path('envelopes') / _bin_name(trial.audio_path.stem, 'env')
            envelope = envelope_from_wav(trial.audio_path, config, args.threads)
            write_envelope(envelope, out_dir / relative)
            written[trial.audio_path] = out_dir / relative
        trials.append(
            trial.model_copy(update={'envelope_path': written[trial.audio_path]})
        )
    path = out_dir / Path(args.manifest).name
    save_manifest(manifest.model_copy(update={'trials': trials}), path)
    logger.info(
        'Огибающие: {n} файлов, манифест -> {path}', n=len(written), path=path
    )


def _recording(path: Path) -> EegRecording:
    signal = read_signal(path)
    return EegRecording(
        data=signal.data,
        rate=signal.rate,
        channel_labels=tuple(signal.labels),
        channel_positions=signal.positions,
    )


def _write_clean(result, path: Path) -> None:
    clean = result.continuous
    write_signal(
        path,
        clean.data,
        clean.rate,
        list(clean.channel_labels),
        clean.channel_positions,
    )


def _report_rows(result, recording: str) -> list[dict]:
    return [{'recording': recording, **row} for row in result.report]


def run_preproc(args: argparse.Namespace) -> None:
    if args.eeg is not None:
        if args.out is None:
            raise CliArgumentError('preproc --eeg требует --out')
        result = preprocess_pipeline(
            _recording(args.eeg), mask_kurtosis=args.mask_kurtosis
        )
        _write_clean(result, args.out)
        if args.rejections is not None:
            rows = _report_rows(result, Path(args.eeg).name)
            frame = pd.DataFrame(rows, columns=REJECTION_COLUMNS)
            write_table(frame, args.rejections, 'rejections')
        return
    if args.manifest is None or args.out_dir is None:
        raise CliArgumentError('Нужно --eeg/--out или --manifest/--out-dir')

    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    groups: dict[Path, list[TrialEntry]] = {}
    for trial in manifest.trials:
        groups.setdefault(trial.eeg_path, []).append(trial)

    updated: dict[str, TrialEntry] = {}
    rows = []
    for eeg_path, trials in groups.items():
        logger.info('preproc {path}: {n} триалов', path=eeg_path, n=len(trials))
        result = preprocess_pipeline(
            _recording(eeg_path), trials, mask_kurtosis=args.mask_kurtosis
        )
        clean_path = out_dir / 'data' / _bin_name(eeg_path, 'clean')
        _write_clean(result, clean_path)
        rows += _report_rows(result, eeg_path.name)
        mask = result.epochs.rejection_mask
        if len(mask) != len(trials):
            logger.warning(
                '{path}: эпох {epochs} из {n} триалов, отбраковка не отмечена',
                path=eeg_path,
                epochs=len(mask),
                n=len(trials),
            )
            mask = [False] * len(trials)
        for trial, rejected in zip(trials, mask):
            updated[trial.trial_id] = trial.model_copy(
                update={'eeg_path': clean_path, 'rejected': bool(rejected)}
            )

    trials = [updated[trial.trial_id] for trial in manifest.trials]
    path = out_dir / Path(args.manifest).name
    save_manifest(manifest.model_copy(update={'trials': trials}), path)
    rejections = args.rejections or out_dir / 'rejections.csv'
    write_table(
        pd.DataFrame(rows, columns=REJECTION_COLUMNS), rejections, 'rejections'
    )
    logger.info(
        'preproc: отбраковано {rej} из {n} триалов, манифест -> {path}',
        rej=sum(trial.rejected for trial in trials),
        n=len(trials),
        path=path,
    )


def register(subparsers: argparse._SubParsersAction) -> None:
    envelope = subparsers.add_parser(
        'envelope', help='Широкополосная огибающая 64 Гц из WAV.'
    )
    envelope.add_argument('--audio', type=Path, help='Один WAV-файл.')
    envelope.add_argument('--out', type=Path, help='Бинарный файл огибающей.')
    envelope.add_argument('--manifest', type=Path, help='Манифест триалов.')
    envelope.add_argument(
        '--out-dir', type=Path, help='Каталог для огибающих и нового манифеста.'
    )
    envelope.add_argument('--n-bands', type=int, default=GAMMATONE_BANDS)
    envelope.add_argument('--lowpass-hz', type=float, default=ENVELOPE_LOWPASS_HZ)
    envelope.set_defaults(handler=run_envelope)

    preproc = subparsers.add_parser(
        'preproc', help='Плохие каналы, отбраковка, референт, интерполяция, 64 Гц.'
    )
    preproc.add_argument('--eeg', type=Path, help='Одна запись без манифеста.')
    preproc.add_argument('--out', type=Path, help='Очищенная запись (с --eeg).')
    preproc.add_argument('--manifest', type=Path)
    preproc.add_argument('--out-dir', type=Path)
    preproc.add_argument('--rejections', type=Path, help='CSV отбракованных окон.')
    preproc.add_argument(
        '--no-kurtosis',
        dest='mask_kurtosis',
        action='store_false',
        help='Маскировать триалы только по амплитуде, без эксцесса.',
    )
    preproc.set_defaults(handler=run_preproc)
