import numpy as np

from envtrack.constants import LIP_DARK_FRACTION
from envtrack.exceptions import InputValidationError
from envtrack.schemas import LipRoi


class RoiError(InputValidationError):
    pass


def _max_vertical_run(dark: np.ndarray) -> np.ndarray:
    """Длина самой длинной вертикальной серии True в каждом столбце."""
    run = np.zeros(dark.shape[1], dtype=int)
    best = np.zeros(dark.shape[1], dtype=int)
    for row in dark:
        run = (run + 1) * row
        np.maximum(best, run, out=best)
    return best


def lip_features(
    frames, roi: LipRoi, dark_fraction: float = LIP_DARK_FRACTION
) -> dict[str, float]:
    """Открытость и яркость губ, усреднённые по кадрам.

    `frames` — кадры в оттенках серого в [0, 1], форма (кадры, высота, ширина).
    Тёмный пиксель (ротовая щель): яркость ≤ dark_fraction · средняя яркость roi.
    Открытость кадра — средняя по столбцам длина самой длинной вертикальной
    тёмной серии, делённая на высоту roi.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3:
        raise RoiError(f'Ожидались кадры (n, h, w) одного размера: {frames.shape}')
    if frames.shape[0] < 1:
        raise RoiError('Нет ни одного кадра')
    _, height, width = frames.shape
    if roi.x + roi.width > width or roi.y + roi.height > height:
        raise RoiError(f'roi {roi} выходит за кадр {width}×{height}')

    patches = frames[:, roi.y : roi.y + roi.height, roi.x : roi.x + roi.width]
    if patches.size == 0:
        raise RoiError(f'Пустой roi: {roi}')
    brightness = patches.mean(axis=(1, 2))
    openness = np.empty(patches.shape[0])
    for i, patch in enumerate(patches):
        dark = patch <= dark_fraction * brightness[i]
        openness[i] = _max_vertical_run(dark).mean() / roi.height
    return {
        'avgLipOpen': float(openness.mean()),
        'avgLipBright': float(brightness.mean()),
    }
