"""Команды features и profiles: признаки дикторов и их связь с точностью."""

import argparse
from pathlib import Path

from envtrack.commands import CliArgumentError
from envtrack.constants import PROFILE_MAX_ABS_R
from envtrack.decoder import speaker_condition_means
from envtrack.features import build_profiles, extract_speaker_features
from envtrack.formats import load_speaker_manifest, read_scores, read_table, write_table
from envtrack.logging import logger
from envtrack.stats import feature_correlations


def run_features(args: argparse.Namespace) -> None:
    manifest = load_speaker_manifest(args.speakers)
    frame = extract_speaker_features(manifest, args.threads)
    write_table(frame, args.out, 'segments')
    logger.info(
        'features: {n} сегментов, {speakers} дикторов -> {path}',
        n=len(frame),
        speakers=frame['speaker_id'].nunique(),
        path=args.out,
    )


def run_profiles(args: argparse.Namespace) -> None:
    segments = read_table(args.segments, 'segments', dtype={'speaker_id': str})
    profiles = build_profiles(segments, args.max_abs_r)
    for name, reason in profiles.dropped.items():
        logger.info(
            'Признак {name} не вошёл в профиль: {reason}', name=name, reason=reason
        )
    write_table(profiles.normalized.reset_index(), args.out, 'profiles')
    if args.radar is not None:
        write_table(profiles.radar_frame(), args.radar, 'radar')

    if args.scores is None:
        if args.correlations is not None or args.speaker_means is not None:
            raise CliArgumentError('--correlations и --speaker-means требуют --scores')
        return
    means = speaker_condition_means(read_scores(args.scores))
    if args.speaker_means is not None:
        write_table(means.reset_index(), args.speaker_means, 'speaker_means')
    if args.correlations is not None:
        correlations = feature_correlations(profiles.normalized, means)
        write_table(correlations, args.correlations, 'correlations')


def register(subparsers: argparse._SubParsersAction) -> None:
    features = subparsers.add_parser(
        'features', help='Акустические и визуальные признаки 30-с сегментов.'
    )
    features.add_argument(
        '--speakers', type=Path, required=True, help='Манифест записей дикторов.'
    )
    features.add_argument('--out', type=Path, required=True, help='CSV сегментов.')
    features.set_defaults(handler=run_features)

    profiles = subparsers.add_parser(
        'profiles', help='Нормированные профили дикторов и корреляции со Спирменом.'
    )
    profiles.add_argument('--segments', type=Path, required=True)
    profiles.add_argument('--out', type=Path, required=True, help='CSV профилей.')
    profiles.add_argument('--max-abs-r', type=float, default=PROFILE_MAX_ABS_R)
    profiles.add_argument('--radar', type=Path, help='CSV для report --style radar.')
    profiles.add_argument('--scores', type=Path, help='CSV оценок декодера.')
    profiles.add_argument(
        '--speaker-means', type=Path, help='CSV средних по дикторам (fig4).'
    )
    profiles.add_argument('--correlations', type=Path, help='CSV корреляций.')
    profiles.set_defaults(handler=run_profiles)
