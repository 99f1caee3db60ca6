"""SVG-отчёты: кривые по лагам, столбцы по дикторам, карты весов, радар профилей.

Координаты считаются здесь, шаблоны из `templates/` только рисуют. Каждый SVG
несёт исходную таблицу в комментарии, поэтому график самодостаточен.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from envtrack.constants import CONDITION_LEVELS, NOISE_LEVELS
from envtrack.decoder import speaker_condition_means
from envtrack.exceptions import InputValidationError
from envtrack.formats import read_scores, read_table
from envtrack.logging import logger

TEMPLATES_DIR = Path(__file__).parent / 'templates'
STYLES = ('fig2', 'fig3', 'fig4', 'topo', 'radar')

CONDITION_COLORS = {
    'AV': '#1f77b4',
    'A': '#ff7f0e',
    'V': '#2ca02c',
    'ML': '#d62728',
    'AV-A': '#7f7f7f',
}
SPEAKER_PALETTE = (
    '#1b9e77',
    '#d95f02',
    '#7570b3',
    '#e7298a',
    '#66a61e',
    '#e6ab02',
    '#a6761d',
    '#666666',
)
PANEL_WIDTH = 320
PANEL_HEIGHT = 220
MARGIN = 48

_environment = Environment(
    loader=FileSystemLoader(TEMPLATES_DIR),
    autoescape=True,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    undefined=StrictUndefined,
)


class ReportInputError(InputValidationError):
    pass


@dataclass
class Series:
    label: str
    color: str
    points: str
    dashed: bool = False


@dataclass
class Panel:
    title: str
    x: float
    y: float
    width: float
    height: float
    series: list[Series] = field(default_factory=list)
    x_ticks: list[tuple[float, str]] = field(default_factory=list)
    y_ticks: list[tuple[float, str]] = field(default_factory=list)
    zero_y: float | None = None
    x_label: str = ''
    y_label: str = ''


@dataclass
class Bar:
    x: float
    y: float
    width: float
    height: float
    color: str
    label: str


@dataclass
class Cell:
    x: float
    y: float
    size: float
    color: str
    value: float


def _data_comment(frame: pd.DataFrame) -> str:
    # внутри XML-комментария недопустимо «--»
    return frame.to_csv(index=False, lineterminator='\n').replace('--', '- -')


def _render(template: str, frame: pd.DataFrame, **context) -> str:
    return _environment.get_template(template).render(
        data_csv=_data_comment(frame), **context
    )


def _value_range(values: np.ndarray) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    lo = min(float(finite.min()), 0.0) if finite.size else 0.0
    hi = max(float(finite.max()), 0.0) if finite.size else 0.0
    if hi - lo < 1e-12:
        return lo - 0.1, hi + 0.1
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    return list(np.linspace(lo, hi, count))


def _scale(value: float, lo: float, hi: float, out_lo: float, out_hi: float) -> float:
    return out_lo + (value - lo) / (hi - lo) * (out_hi - out_lo)


def line_panel(
    title: str,
    lines: list[tuple[str, np.ndarray, np.ndarray, str, bool]],
    x: float,
    y: float,
    y_range: tuple[float, float],
    x_label: str = 'лаг, мс',
    y_label: str = 'r_z',
) -> Panel:
    """Панель с линиями (label, xs, ys, color, dashed) в общих осях."""
    all_x = np.concatenate([xs for _, xs, _, _, _ in lines]) if lines else np.zeros(1)
    x_lo, x_hi = float(np.min(all_x)), float(np.max(all_x))
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    y_lo, y_hi = y_range
    left, right = x + MARGIN, x + PANEL_WIDTH - 8
    top, bottom = y + 24, y + PANEL_HEIGHT - 32

    def point(px: float, py: float) -> str:
        sx = _scale(px, x_lo, x_hi, left, right)
        sy = _scale(py, y_lo, y_hi, bottom, top)
        return f'{sx:.2f},{sy:.2f}'

    series = [
        Series(
            label=label,
            color=color,
            points=' '.join(
                point(px, py) for px, py in zip(xs, ys) if math.isfinite(py)
            ),
            dashed=dashed,
        )
        for label, xs, ys, color, dashed in lines
    ]
    zero = _scale(0.0, y_lo, y_hi, bottom, top) if y_lo <= 0 <= y_hi else None
    return Panel(
        title=title,
        x=left,
        y=top,
        width=right - left,
        height=bottom - top,
        series=series,
        x_ticks=[
            (_scale(v, x_lo, x_hi, left, right), f'{v:g}')
            for v in _ticks(x_lo, x_hi)
        ],
        y_ticks=[
            (_scale(v, y_lo, y_hi, bottom, top), f'{v:.3g}')
            for v in _ticks(y_lo, y_hi)
        ],
        zero_y=zero,
        x_label=x_label,
        y_label=y_label,
    )


# --- подготовка данных -------------------------------------------------------


def lag_curves(frame: pd.DataFrame, by: tuple[str, ...]) -> pd.DataFrame:
    """Средний r_z по лагу из таблицы sweep или поэпизодных оценок.

    Оконные строки ('200:325') в кривые по лагам не входят.
    """
    if 'mean_r_z' in frame.columns:
        data = frame.rename(columns={'mean_r_z': 'r_z'})
    else:
        labels = frame['lag_or_window'].astype(str)
        data = frame[~labels.str.contains(':')].assign(
            lag_ms=lambda df: df['lag_or_window'].astype(float)
        )
    if data.empty:
        raise ReportInputError('В таблице нет однолаговых оценок для кривых')
    curves = data.groupby([*by, 'lag_ms'], sort=True)['r_z'].mean().reset_index()
    return curves.rename(columns={'r_z': 'mean_r_z'})


def chance_curves(chance: pd.DataFrame) -> pd.DataFrame:
    labels = chance['lag_or_window'].astype(str)
    data = chance[~labels.str.contains(':')].assign(
        lag_ms=lambda df: df['lag_or_window'].astype(float)
    )
    return (
        data.groupby(['noise', 'condition', 'lag_ms'], sort=True)['chance_p95']
        .mean()
        .reset_index()
    )


def fig2_svg(curves: pd.DataFrame, chance: pd.DataFrame | None = None) -> str:
    """Панель на уровень шума, линия на условие; пунктир — 95-й перцентиль случая."""
    values = curves['mean_r_z'].to_numpy(dtype=float)
    if chance is not None and not chance.empty:
        values = np.concatenate([values, chance['chance_p95'].to_numpy(dtype=float)])
    y_range = _value_range(values)
    panels = []
    for i, noise in enumerate(NOISE_LEVELS):
        lines = []
        for condition in CONDITION_LEVELS:
            rows = curves[
                (curves['noise'] == noise.value)
                & (curves['condition'] == condition.value)
            ]
            if rows.empty:
                continue
            color = CONDITION_COLORS[condition.value]
            lines.append(
                (
                    condition.value,
                    rows['lag_ms'].to_numpy(dtype=float),
                    rows['mean_r_z'].to_numpy(dtype=float),
                    color,
                    False,
                )
            )
            if chance is not None:
                base = chance[
                    (chance['noise'] == noise.value)
                    & (chance['condition'] == condition.value)
                ]
                if not base.empty:
                    lines.append(
                        (
                            f'{condition.value} случай',
                            base['lag_ms'].to_numpy(dtype=float),
                            base['chance_p95'].to_numpy(dtype=float),
                            color,
                            True,
                        )
                    )
        panels.append(line_panel(noise.value, lines, i * PANEL_WIDTH, 30, y_range))
    data = curves if chance is None else curves.merge(chance, how='left')
    return _render(
        'lines.svg.j2',
        data,
        style='fig2',
        title='Точность реконструкции по лагам',
        width=len(NOISE_LEVELS) * PANEL_WIDTH,
        height=PANEL_HEIGHT + 60,
        panels=panels,
        legend=_condition_legend(curves['condition'].unique()),
    )


def fig3_svg(curves: pd.DataFrame) -> str:
    """Кривые по лагам для каждого диктора, линия на условие."""
    speakers = sorted(curves['speaker_id'].astype(str).unique())
    if not speakers:
        raise ReportInputError('Нет дикторов для fig3')
    y_range = _value_range(curves['mean_r_z'].to_numpy(dtype=float))
    columns = min(3, len(speakers))
    panels = []
    for i, speaker in enumerate(speakers):
        rows = curves[curves['speaker_id'].astype(str) == speaker]
        lines = [
            (
                condition.value,
                part['lag_ms'].to_numpy(dtype=float),
                part['mean_r_z'].to_numpy(dtype=float),
                CONDITION_COLORS[condition.value],
                False,
            )
            for condition in CONDITION_LEVELS
            if not (part := rows[rows['condition'] == condition.value]).empty
        ]
        panels.append(
            line_panel(
                speaker,
                lines,
                (i % columns) * PANEL_WIDTH,
                30 + (i // columns) * PANEL_HEIGHT,
                y_range,
            )
        )
    n_rows = math.ceil(len(speakers) / columns)
    return _render(
        'lines.svg.j2',
        curves,
        style='fig3',
        title='Кривые по лагам для дикторов',
        width=columns * PANEL_WIDTH,
        height=n_rows * PANEL_HEIGHT + 60,
        panels=panels,
        legend=_condition_legend(curves['condition'].unique()),
    )


def fig4_svg(means: pd.DataFrame) -> str:
    """Столбцы AV, A и AV − A для каждого диктора."""
    groups = [c for c in ('AV', 'A', 'AV-A') if c in means.columns]
    if means.empty or not groups:
        raise ReportInputError('Для fig4 нужны средние AV/A по дикторам')
    values = means[groups].to_numpy(dtype=float)
    lo, hi = _value_range(values.ravel())
    width = max(PANEL_WIDTH, 60 + len(means) * (len(groups) * 18 + 24))
    left, top, bottom = MARGIN, 40, PANEL_HEIGHT + 10
    zero = _scale(0.0, lo, hi, bottom, top)
    bars = []
    labels = []
    x = left + 12
    for speaker, row in means.iterrows():
        start = x
        for group in groups:
            value = float(row[group])
            if math.isfinite(value):
                y_value = _scale(value, lo, hi, bottom, top)
                bars.append(
                    Bar(
                        x=x,
                        y=min(y_value, zero),
                        width=16,
                        height=abs(zero - y_value),
                        color=CONDITION_COLORS[group],
                        label=f'{speaker} {group}: {value:.3f}',
                    )
                )
            x += 18
        labels.append(((start + x) / 2, str(speaker)))
        x += 24
    return _render(
        'bars.svg.j2',
        means.reset_index(),
        style='fig4',
        title='Средний r_z по дикторам',
        width=width,
        height=PANEL_HEIGHT + 60,
        bars=bars,
        labels=labels,
        label_y=bottom + 16,
        zero_y=zero,
        axis_left=left,
        axis_right=width - 8,
        y_ticks=[(_scale(v, lo, hi, bottom, top), f'{v:.3g}') for v in _ticks(lo, hi)],
        legend=_condition_legend(groups),
    )


def _diverging(value: float, limit: float) -> str:
    """Синий (−) — белый (0) — красный (+)."""
    t = 0.0 if limit <= 0 else max(-1.0, min(1.0, value / limit))
    fade = int(round(255 * (1 - abs(t))))
    if t >= 0:
        return f'#ff{fade:02x}{fade:02x}'
    return f'#{fade:02x}{fade:02x}ff'


def topo_svg(weights: pd.DataFrame) -> str:
    """Сетка весов декодера: строки — каналы, столбцы — лаги, панель на ячейку."""
    keys = ['noise', 'condition']
    if weights.empty:
        raise ReportInputError('Нет весов для topo')
    # среднее по испытуемым, порядок каналов как в таблице
    weights = (
        weights.groupby([*keys, 'channel', 'lag_ms'], sort=False)['weight']
        .mean()
        .reset_index()
    )
    limit = float(np.nanmax(np.abs(weights['weight'].to_numpy(dtype=float))))
    panels = []
    size = 10
    for i, ((noise, condition), part) in enumerate(
        weights.groupby(keys, sort=True)
    ):
        channels = list(dict.fromkeys(part['channel'].astype(str)))
        lags = sorted(part['lag_ms'].unique())
        x0 = 60 + i * (len(lags) * size + 70)
        cells = [
            Cell(
                x=x0 + lags.index(row.lag_ms) * size,
                y=50 + channels.index(str(row.channel)) * size,
                size=size,
                color=_diverging(float(row.weight), limit),
                value=float(row.weight),
            )
            for row in part.itertuples()
        ]
        panels.append(
            {
                'title': f'{noise} {condition}',
                'x': x0,
                'cells': cells,
                'channels': [
                    (50 + k * size + size * 0.8, c) for k, c in enumerate(channels)
                ],
                'lags': (lags[0], lags[-1]),
                'width': len(lags) * size,
                'height': len(channels) * size,
            }
        )
    width = panels[-1]['x'] + panels[-1]['width'] + 40
    height = max(p['height'] for p in panels) + 90
    return _render(
        'topo.svg.j2',
        weights,
        style='topo',
        title='Веса декодера (каналы × лаги)',
        width=width,
        height=height,
        panels=panels,
        limit=limit,
    )


def radar_svg(radar: pd.DataFrame) -> str:
    """Радар нормированных профилей: ось на признак, многоугольник на диктора."""
    features = list(dict.fromkeys(radar['feature'].astype(str)))
    speakers = sorted(radar['speaker_id'].astype(str).unique())
    if len(features) < 3:
        raise ReportInputError('Для радара нужно ≥ 3 признаков')
    size = 420
    cx = cy = size / 2
    radius = size / 2 - 70
    step = 2 * math.pi / len(features)
    angles = [step * k - math.pi / 2 for k in range(len(features))]

    def polar(value: float, angle: float) -> tuple[float, float]:
        r = radius * value
        return cx + r * math.cos(angle), cy + r * math.sin(angle)

    axes = [
        (*polar(1.0, a), *polar(1.12, a), name) for a, name in zip(angles, features)
    ]
    rings = [
        ' '.join('{:.2f},{:.2f}'.format(*polar(level, a)) for a in angles)
        for level in (0.25, 0.5, 0.75, 1.0)
    ]
    table = radar.assign(speaker_id=radar['speaker_id'].astype(str)).pivot_table(
        index='speaker_id', columns='feature', values='value'
    )
    polygons = [
        Series(
            label=speaker,
            color=SPEAKER_PALETTE[i % len(SPEAKER_PALETTE)],
            points=' '.join(
                '{:.2f},{:.2f}'.format(*polar(float(table.loc[speaker, name]), a))
                for a, name in zip(angles, features)
            ),
        )
        for i, speaker in enumerate(speakers)
    ]
    return _render(
        'radar.svg.j2',
        radar,
        style='radar',
        title='Профили дикторов',
        width=size + 120,
        height=size + 30,
        cx=cx,
        cy=cy,
        axes=axes,
        rings=rings,
        polygons=polygons,
    )


def _condition_legend(conditions) -> list[tuple[str, str]]:
    present = {str(c) for c in conditions}
    order = [c.value for c in CONDITION_LEVELS] + ['AV-A']
    return [(c, CONDITION_COLORS[c]) for c in order if c in present]


# --- точка входа команды report ---------------------------------------------


def build_report(
    table_path: Path, style: str, chance_path: Path | None = None
) -> str:
    """SVG заданного стиля по CSV-таблице конвейера."""
    if style not in STYLES:
        raise ReportInputError(f'Неизвестный стиль {style!r}, есть {STYLES}')
    text_columns = dict.fromkeys(
        ('trial_id', 'subject_id', 'speaker_id', 'lag_or_window', 'channel'), str
    )
    if style == 'fig2':
        frame = read_table(table_path, ('sweep', 'scores'), dtype=text_columns)
        chance = None
        if chance_path is not None:
            raw = read_table(chance_path, 'chance', dtype=text_columns)
            chance = chance_curves(raw)
        return fig2_svg(lag_curves(frame, ('noise', 'condition')), chance)
    if style == 'fig3':
        frame = read_table(table_path, 'scores', dtype=text_columns)
        return fig3_svg(lag_curves(frame, ('speaker_id', 'condition')))
    if style == 'fig4':
        frame = read_table(table_path, ('scores', 'speaker_means'), dtype=text_columns)
        if 'r_z' in frame.columns:
            return fig4_svg(speaker_condition_means(read_scores(table_path)))
        return fig4_svg(frame.set_index('speaker_id'))
    if style == 'topo':
        return topo_svg(read_table(table_path, 'weights', dtype=text_columns))
    return radar_svg(read_table(table_path, 'radar', dtype=text_columns))


def write_report(
    table_path: Path, style: str, out_path: Path, chance_path: Path | None = None
) -> Path:
    svg = build_report(table_path, style, chance_path)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg, encoding='utf-8')
    logger.info('Отчёт {style} -> {path}', style=style, path=out_path)
    return out_path
