import zlib
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np

from envtrack.config import settings

T = TypeVar('T')
R = TypeVar('R')


def resolve_threads(threads: int | None = None) -> int:
    """Число воркеров: явное значение, иначе ENVTRACK_THREADS, минимум 1."""
    return max(1, threads if threads is not None else settings.THREADS)


def parallel_map(
    func: Callable[[T], R], items: Iterable[T], threads: int | None = None
) -> list[R]:
    """Применить `func` к элементам, сохраняя порядок результатов.

    Порядок результатов совпадает с порядком входа при любом числе потоков,
    поэтому последующие редукции детерминированы.
    """
    items = list(items)
    workers = min(resolve_threads(threads), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def stable_key(name: str) -> int:
    """Стабильный между запусками хэш строки (встроенный hash() солится)."""
    return zlib.crc32(name.encode('utf-8'))


def derive_rng(seed: int, *names: str) -> np.random.Generator:
    """Отдельный поток ГПСЧ для (seed, имя...).

    Случайность триала не зависит от порядка генерации, поэтому параллельная
    генерация не меняет результат.
    """
    seq = np.random.SeedSequence(
        entropy=seed, spawn_key=tuple(stable_key(name) for name in names)
    )
    return np.random.default_rng(seq)
