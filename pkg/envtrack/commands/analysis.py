"""Команды stats и report."""

import argparse
import sys
from pathlib import Path

from envtrack.formats import read_scores, write_table
from envtrack.logging import logger
from envtrack.reports import STYLES, write_report
from envtrack.stats import (
    cell_means_from_scores,
    format_report,
    planned_contrasts,
    rm_anova_2x4,
    stats_frame,
)


def run_stats(args: argparse.Namespace) -> None:
    scores = []
    for path in args.scores:
        scores.extend(read_scores(path))
    data, subjects = cell_means_from_scores(scores)
    logger.info(
        'stats: {n} испытуемых, {rows} оценок', n=len(subjects), rows=len(scores)
    )
    anova = rm_anova_2x4(data)
    tests = planned_contrasts(data)
    write_table(stats_frame(anova, tests), args.out, 'stats')
    report = format_report(anova, tests)
    if args.text is not None:
        Path(args.text).write_text(report, encoding='utf-8')
    else:
        sys.stdout.write(report)


def run_report(args: argparse.Namespace) -> None:
    write_report(args.table, args.style, args.out, args.chance)


def register(subparsers: argparse._SubParsersAction) -> None:
    stats = subparsers.add_parser(
        'stats', help='2×4 RM-ANOVA и плановые парные сравнения по r_z.'
    )
    stats.add_argument(
        '--scores',
        type=Path,
        action='append',
        required=True,
        help='CSV оценок; флаг можно повторять.',
    )
    stats.add_argument('--out', type=Path, required=True, help='CSV статистики.')
    stats.add_argument('--text', type=Path, help='Текстовый отчёт вместо stdout.')
    stats.set_defaults(handler=run_stats)

    report = subparsers.add_parser('report', help='SVG-рисунок по таблице.')
    report.add_argument('--from', dest='table', type=Path, required=True)
    report.add_argument('--style', choices=STYLES, required=True)
    report.add_argument('--chance', type=Path, help='CSV уровня случайности (fig2).')
    report.add_argument('--out', type=Path, required=True)
    report.set_defaults(handler=run_report)
