"""Точка входа CLI `envtrack`.

Коды выхода: 0 — успех, 2 — ошибка входных данных (включая отсутствующий
файл), 3 — численный сбой.
Прочие исключения логируются, уходят в Hawk и пробрасываются дальше.
"""

import argparse
import sys
from collections.abc import Sequence

import numpy as np
from hawk_python_sdk import Hawk
from pydantic import ValidationError

from envtrack.commands import analysis, decoding, signals, simulation, speakers
from envtrack.config import settings
from envtrack.exceptions import InputValidationError, NumericFailure
from envtrack.logging import logger, set_stderr_level

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_NUMERIC_FAILURE = 3

# Без токена send() — no-op, поэтому объект создаём всегда.
# SDK допускает None в рантайме, но в их сигнатуре тип занижен.
hawk = Hawk(settings.HAWK_TOKEN)  # ty: ignore[invalid-argument-type]

COMMAND_MODULES = (signals, decoding, speakers, analysis, simulation)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='envtrack',
        description='Отслеживание огибающей речи по ЭЭГ: от аудио и ЭЭГ до статистики.',
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help=f'Зерно случайности (по умолчанию {settings.DEFAULT_SEED}).',
    )
    parser.add_argument(
        '--threads',
        type=int,
        default=None,
        help='Число потоков; на результат не влияет (ENVTRACK_THREADS).',
    )
    parser.add_argument('--verbose', action='store_true', help='Логи уровня DEBUG.')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_stderr_level('DEBUG')
    if args.threads is not None and args.threads < 1:
        logger.error('--threads должен быть >= 1: {threads}', threads=args.threads)
        return EXIT_INVALID_INPUT
    try:
        args.handler(args)
    except (InputValidationError, ValidationError, FileNotFoundError) as exc:
        logger.error('{command}: {exc}', command=args.command, exc=exc)
        return EXIT_INVALID_INPUT
    except (NumericFailure, np.linalg.LinAlgError) as exc:
        logger.error(
            '{command}: численный сбой: {exc}', command=args.command, exc=exc
        )
        return EXIT_NUMERIC_FAILURE
    except Exception as exc:
        logger.exception('Exception')
        # Сбой трекера не должен подменять исходную ошибку.
        try:
            hawk.send(exc)
        except Exception:
            logger.exception('Не удалось отправить ошибку в Hawk')
        raise
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == '__main__':
    run()
