import sys

from loguru import logger

from envtrack.config import settings

log_level = 'DEBUG' if settings.IS_DEBUG else 'INFO'

# CLI пишет прогресс в stderr, stdout остаётся чистым для данных.
logger.remove()
_stderr_sink = logger.add(sys.stderr, level=log_level, backtrace=False, diagnose=False)

if settings.LOGS_DIR is not None:
    settings.LOGS_DIR.mkdir(exist_ok=True, parents=True)
    logger.add(
        settings.LOGS_DIR / 'log.log',
        level=log_level,
        backtrace=False,
        diagnose=False,
    )
    logger.add(
        settings.LOGS_DIR / 'errors.log',
        level='ERROR',
        backtrace=True,
        diagnose=True,
    )


def set_stderr_level(level: str) -> None:
    """Переустановить stderr-синк с новым уровнем (флаг --verbose)."""
    global _stderr_sink
    logger.remove(_stderr_sink)
    _stderr_sink = logger.add(sys.stderr, level=level, backtrace=False, diagnose=False)
