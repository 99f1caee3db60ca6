"""Команды decode, sweep и chance: от манифеста до таблиц точности."""

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from envtrack.commands import (
    add_decoder_arguments,
    add_manifest_argument,
    parse_lambda_grid,
    parse_window,
    resolve_seed,
)
from envtrack.config import settings
from envtrack.constants import ENVELOPE_RATE, WINDOW_OF_INTEREST_MS
from envtrack.decoder import (
    LagSpec,
    TrialPair,
    chance_level,
    decode_window,
    single_lag_sweep,
    sweep_lags,
)
from envtrack.envelope import envelope_from_wav
from envtrack.formats import (
    ManifestError,
    load_manifest,
    read_signal,
    slice_seconds,
    write_scores,
    write_table,
)
from envtrack.logging import logger
from envtrack.schemas import TrialEntry


def _trial_envelope(trial: TrialEntry, cache: dict, threads: int | None) -> np.ndarray:
    n = int(round(trial.duration_s * ENVELOPE_RATE))
    if trial.envelope_path is not None:
        stimulus = read_signal(trial.envelope_path)
        if stimulus.rate != ENVELOPE_RATE:
            raise ManifestError(
                f'{trial.envelope_path}: огибающая {stimulus.rate} Гц, нужна '
                f'{ENVELOPE_RATE} Гц'
            )
        samples = stimulus.data[0]
    else:
        if trial.audio_path not in cache:
            cache[trial.audio_path] = envelope_from_wav(
                trial.audio_path, threads=threads
            ).samples
        samples = cache[trial.audio_path]
    if samples.size < n:
        raise ManifestError(
            f'Триал {trial.trial_id}: огибающая {samples.size / ENVELOPE_RATE:.2f} с '
            f'короче триала {trial.duration_s} с'
        )
    return samples[:n]


def pairs_from_manifest(
    path: Path, include_rejected: bool = False, threads: int | None = None
) -> list[TrialPair]:
    """Пары (эпоха ЭЭГ 64 Гц, огибающая) для всех триалов манифеста.

    ЭЭГ должна быть уже очищена командой preproc (64 Гц). Отбракованные
    триалы пропускаются, если не задан `include_rejected`.
    """
    manifest = load_manifest(path)
    subject = manifest.metadata.subject_id
    recordings = {}
    envelopes: dict = {}
    pairs = []
    skipped = 0
    for trial in manifest.trials:
        if trial.rejected and not include_rejected:
            skipped += 1
            continue
        if trial.eeg_path not in recordings:
            recording = read_signal(trial.eeg_path)
            if recording.rate != ENVELOPE_RATE:
                raise ManifestError(
                    f'{trial.eeg_path}: ЭЭГ {recording.rate} Гц; сначала '
                    f'выполните preproc (нужно {ENVELOPE_RATE} Гц)'
                )
            recordings[trial.eeg_path] = recording
        eeg = slice_seconds(
            recordings[trial.eeg_path].data,
            ENVELOPE_RATE,
            trial.eeg_offset_s,
            trial.duration_s,
        )
        pairs.append(
            TrialPair(
                eeg=eeg,
                envelope=_trial_envelope(trial, envelopes, threads),
                condition=trial.condition,
                noise=trial.noise,
                speaker_id=trial.speaker_id,
                trial_id=trial.trial_id,
                subject_id=subject,
            )
        )
    logger.info(
        '{path}: {n} триалов, пропущено отбракованных {skipped}',
        path=path,
        n=len(pairs),
        skipped=skipped,
    )
    return pairs


def load_pairs(args: argparse.Namespace) -> list[TrialPair]:
    pairs = []
    for path in args.manifest:
        pairs.extend(
            pairs_from_manifest(Path(path), args.include_rejected, args.threads)
        )
    return pairs


def weights_frame(decode, channel_labels: list[str] | None = None) -> pd.DataFrame:
    rows = []
    for (subject, noise, condition), model in decode.models.items():
        topography = model.topography()
        labels = channel_labels or [f'ch{k}' for k in range(model.n_channels)]
        for c, label in enumerate(labels):
            for ell, lag_ms in enumerate(model.lag_spec.lag_ms):
                rows.append(
                    {
                        'subject_id': subject,
                        'noise': noise.value,
                        'condition': condition.value,
                        'channel': label,
                        'lag_ms': float(lag_ms),
                        'weight': float(topography[c, ell]),
                    }
                )
    return pd.DataFrame(rows)


def _channel_labels(args: argparse.Namespace) -> list[str] | None:
    manifest = load_manifest(Path(args.manifest[0]))
    return read_signal(manifest.trials[0].eeg_path).labels


def run_decode(args: argparse.Namespace) -> None:
    pairs = load_pairs(args)
    result = decode_window(
        pairs,
        parse_window(args.window),
        parse_lambda_grid(args.lambda_grid),
        tie_se=args.tie_se,
        threads=args.threads,
    )
    write_scores(result.scores, args.out)
    if args.weights is not None:
        weights = weights_frame(result, _channel_labels(args))
        write_table(weights, args.weights, 'weights')
    logger.info('decode: {n} оценок -> {path}', n=len(result.scores), path=args.out)


def run_sweep(args: argparse.Namespace) -> None:
    pairs = load_pairs(args)
    result = single_lag_sweep(
        pairs,
        parse_lambda_grid(args.lambda_grid),
        max_lag_ms=args.max_lag_ms,
        tie_se=args.tie_se,
        threads=args.threads,
    )
    frame = result.frame()
    frame['chance_p95'] = np.nan
    if args.chance_perm > 0:
        lambdas = {}
        specs = sweep_lags(args.max_lag_ms)
        for curve in result.curves:
            for spec, lam in zip(specs, curve.lambdas):
                lambdas[(curve.cell, spec.label)] = float(lam)
        chance = chance_level(
            pairs,
            args.chance_perm,
            seed=resolve_seed(args),
            lag_specs=specs,
            lambdas=lambdas,
            threads=args.threads,
        ).frame()
        chance['lag_ms'] = chance['lag_or_window'].astype(float)
        keys = ['subject_id', 'noise', 'condition', 'lag_ms']
        frame = frame.drop(columns='chance_p95').merge(
            chance[[*keys, 'chance_p95']], on=keys, how='left'
        )
    write_table(frame, args.out, 'sweep')
    if args.scores_out is not None:
        write_scores(result.scores, args.scores_out)


def run_chance(args: argparse.Namespace) -> None:
    pairs = load_pairs(args)
    if args.sweep:
        specs = sweep_lags()
    else:
        specs = [LagSpec.from_window(parse_window(args.window))]
    result = chance_level(
        pairs,
        settings.CHANCE_PERMUTATIONS if args.n_perm is None else args.n_perm,
        seed=resolve_seed(args),
        lag_specs=specs,
        grid=parse_lambda_grid(args.lambda_grid),
        tie_se=args.tie_se,
        threads=args.threads,
    )
    write_table(result.frame(), args.out, 'chance')


def register(subparsers: argparse._SubParsersAction) -> None:
    window_default = '{:g}:{:g}'.format(*WINDOW_OF_INTEREST_MS)

    decode = subparsers.add_parser(
        'decode', help='Оконная многолаговая модель, LOO-оценки по триалам.'
    )
    add_manifest_argument(decode)
    add_decoder_arguments(decode)
    decode.add_argument('--window', default=window_default, help='Окно лагов, мс.')
    decode.add_argument('--out', type=Path, required=True, help='CSV оценок.')
    decode.add_argument('--weights', type=Path, help='CSV весов декодера (topo).')
    decode.set_defaults(handler=run_decode)

    sweep = subparsers.add_parser(
        'sweep', help='Однолаговые модели 0..500 мс: кривая r_z по лагам.'
    )
    add_manifest_argument(sweep)
    add_decoder_arguments(sweep)
    sweep.add_argument('--max-lag-ms', type=float, default=500.0)
    sweep.add_argument(
        '--chance-perm',
        type=int,
        default=0,
        help='Перестановок для столбца уровня случайности (0 — не считать).',
    )
    sweep.add_argument('--out', type=Path, required=True, help='CSV кривых.')
    sweep.add_argument('--scores-out', type=Path, help='CSV поэпизодных оценок.')
    sweep.set_defaults(handler=run_sweep)

    chance = subparsers.add_parser(
        'chance', help='Распределение r_z при перепутанных парах ЭЭГ↔огибающая.'
    )
    add_manifest_argument(chance)
    add_decoder_arguments(chance)
    chance.add_argument('--n-perm', type=int, default=None)
    chance.add_argument('--window', default=window_default)
    chance.add_argument(
        '--sweep', action='store_true', help='Все 33 однолаговые модели вместо окна.'
    )
    chance.add_argument('--out', type=Path, required=True)
    chance.set_defaults(handler=run_chance)
