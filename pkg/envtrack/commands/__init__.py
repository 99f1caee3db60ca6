"""Подкоманды CLI. Каждый модуль регистрирует свои парсеры через `register`."""

import argparse

from envtrack.config import settings
from envtrack.constants import PAPER_LAMBDA_GRID
from envtrack.exceptions import InputValidationError


class CliArgumentError(InputValidationError):
    pass


def parse_lambda_grid(value: str) -> list[float]:
    """`paper` — сетка из 13 значений, `custom:1,10,100` — своя сетка."""
    if value == 'paper':
        return list(PAPER_LAMBDA_GRID)
    prefix = 'custom:'
    if not value.startswith(prefix):
        raise CliArgumentError(
            f'--lambda-grid: ожидалось paper или custom:<список>: {value}'
        )
    try:
        grid = [float(item) for item in value[len(prefix) :].split(',') if item]
    except ValueError as exc:
        raise CliArgumentError(f'--lambda-grid: не число в {value!r}') from exc
    if not grid or any(lam < 0 for lam in grid):
        raise CliArgumentError(f'--lambda-grid: нужна непустая сетка λ ≥ 0: {value}')
    return grid


def parse_window(value: str) -> tuple[float, float]:
    """`200:325` -> (200.0, 325.0) в миллисекундах."""
    try:
        start, stop = (float(part) for part in value.split(':'))
    except ValueError as exc:
        raise CliArgumentError(
            f'--window: ожидалось <от>:<до> в мс: {value!r}'
        ) from exc
    return start, stop


def add_manifest_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--manifest',
        action='append',
        required=True,
        type=str,
        help='Манифест триалов (JSON); по флагу на испытуемого.',
    )


def add_decoder_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        '--lambda-grid',
        default='paper',
        help='Сетка λ: paper или custom:<λ1,λ2,...>.',
    )
    parser.add_argument(
        '--tie-se',
        type=float,
        default=0.0,
        help='Допуск в SE при выборе λ (0 — строгий минимум, 1 — правило одной SE).',
    )
    parser.add_argument(
        '--include-rejected',
        action='store_true',
        help='Не пропускать триалы, помеченные препроцессингом как отбракованные.',
    )


def resolve_seed(args: argparse.Namespace) -> int:
    return settings.DEFAULT_SEED if args.seed is None else args.seed
