"""Статистика: корреляции, парные t-тесты, 2×4 RM-ANOVA, поправка Холма.

p-значения считаются через регуляризованную неполную бета-функцию, поэтому
нецелые (скорректированные) степени свободы допустимы.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import betainc
from scipy.stats import rankdata

from envtrack.constants import CONDITION_LEVELS, NOISE_LEVELS, Condition, Noise
from envtrack.exceptions import InputValidationError, NumericFailure
from envtrack.logging import logger
from envtrack.schemas import AnovaEffect, TestResult, TrackingScore


class StatisticUndefinedError(NumericFailure):
    pass


class StatsInputError(InputValidationError):
    pass


class MissingCellsError(StatsInputError):
    pass


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p: float
    n: int
    # при n < 10 p-значение только описательное
    reliable: bool


@dataclass(frozen=True)
class RmAnovaResult:
    effects: dict[str, AnovaEffect]

    def __getitem__(self, effect: str) -> AnovaEffect:
        return self.effects[effect]


def t_sf_two_sided(t: float, df: float) -> float:
    return float(betainc(df / 2, 0.5, df / (df + t * t)))


def f_sf(F: float, df_num: float, df_den: float) -> float:
    return float(betainc(df_den / 2, df_num / 2, df_den / (df_den + df_num * F)))


def _pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsInputError(f'Нужны ряды одной длины: {x.shape} и {y.shape}')
    if x.size < min_n:
        raise StatsInputError(f'Нужно >= {min_n} наблюдений, получено {x.size}')
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise StatsInputError('Ряды содержат NaN/inf')
    return x, y


def pearson_r(x, y) -> float:
    x, y = _pair(x, y, 2)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise StatisticUndefinedError('Корреляция не определена: постоянный ряд')
    xc = x - x.mean()
    yc = y - y.mean()
    r = (xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc))
    return float(np.clip(r, -1.0, 1.0))


def spearman(x, y) -> SpearmanResult:
    """Ранговая корреляция: Пирсон по средним рангам, p по t-приближению."""
    x, y = _pair(x, y, 3)
    rho = pearson_r(rankdata(x), rankdata(y))
    n = x.size
    if abs(rho) >= 1:
        p = 0.0
    else:
        t = rho * np.sqrt((n - 2) / (1 - rho * rho))
        p = t_sf_two_sided(t, n - 2)
    return SpearmanResult(rho=rho, p=p, n=n, reliable=n >= 10)


def paired_t(x, y, label: str = '') -> TestResult:
    """Парный t-тест, двусторонний; размер эффекта — Cohen's d = mean(d)/sd(d)."""
    x, y = _pair(x, y, 3)
    diff = x - y
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd <= 1e-12 * np.max(np.abs(diff)):
        raise StatisticUndefinedError(
            f'{label}: zero variance разностей, t не определён'
        )
    n = diff.size
    t = mean / (sd / np.sqrt(n))
    p = t_sf_two_sided(t, n - 1)
    return TestResult(
        label=label,
        statistic=float(t),
        df=n - 1,
        p_raw=p,
        p_adjusted=p,
        effect_size=float(mean / sd),
    )


def holm_bonferroni(p_values) -> np.ndarray:
    """Поправка Холма: шаг вниз с накопленным максимумом, не выше 1."""
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise StatsInputError('Ожидался вектор p-значений')
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise StatsInputError(f'p-значения вне [0, 1]: {p_values}')
    m = p.size
    order = np.argsort(p, kind='stable')
    stepped = (m - np.arange(m)) * p[order]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(np.maximum.accumulate(stepped), 1.0)
    return adjusted


def _within_effect(flat: np.ndarray, contrast: np.ndarray, name: str) -> AnovaEffect:
    scores = flat @ contrast
    n, k = scores.shape
    mean = scores.mean(axis=0)
    centered = scores - mean
    ss_effect = n * float(mean @ mean)
    ss_error = float(np.sum(centered * centered))
    if ss_error <= 0:
        raise StatisticUndefinedError(f'{name}: нулевая ошибка, F не определён')
    df_num, df_den = k, k * (n - 1)
    F = (ss_effect / df_num) / (ss_error / df_den)
    epsilon = 1.0
    if k > 1:
        cov = np.cov(scores, rowvar=False)
        epsilon = float(np.trace(cov) ** 2 / (k * np.trace(cov @ cov)))
        epsilon = min(max(epsilon, 1.0 / k), 1.0)
    return AnovaEffect(
        effect=name,
        F=F,
        df_num=epsilon * df_num,
        df_den=epsilon * df_den,
        df_num_uncorrected=df_num,
        df_den_uncorrected=df_den,
        epsilon=epsilon,
        p=f_sf(F, epsilon * df_num, epsilon * df_den),
        p_uncorrected=f_sf(F, df_num, df_den),
        eta_squared=ss_effect / (ss_effect + ss_error),
    )


def rm_anova_two_way(
    data: np.ndarray, names: tuple[str, str] = ('A', 'B')
) -> RmAnovaResult:
    """Двухфакторная внутригрупповая ANOVA для массива испытуемые × a × b.

    Каждый эффект проверяется на своих ортонормированных контрастах;
    сферичность — эпсилон Гринхауса–Гейссера, размер — частичный η².
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 3:
        raise StatsInputError(f'Ожидался массив испытуемые × a × b: {data.shape}')
    if np.any(~np.isfinite(data)):
        raise MissingCellsError('План неполный: есть пустые ячейки (NaN)')
    n, a, b = data.shape
    if n < 3:
        raise StatsInputError(f'Нужно >= 3 испытуемых, получено {n}')
    contrast_a = linalg.null_space(np.ones((1, a)))
    contrast_b = linalg.null_space(np.ones((1, b)))
    mean_a = np.full((a, 1), 1 / np.sqrt(a))
    mean_b = np.full((b, 1), 1 / np.sqrt(b))
    flat = data.reshape(n, a * b)
    first, second = names
    interaction = f'{first}:{second}'
    return RmAnovaResult(
        {
            first: _within_effect(flat, np.kron(contrast_a, mean_b), first),
            second: _within_effect(flat, np.kron(mean_a, contrast_b), second),
            interaction: _within_effect(
                flat, np.kron(contrast_a, contrast_b), interaction
            ),
        }
    )


def rm_anova_2x4(data: np.ndarray) -> RmAnovaResult:
    """RM-ANOVA шум (2) × условие (4) на r_z."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 3 or data.shape[1:] != (len(NOISE_LEVELS), len(CONDITION_LEVELS)):
        raise StatsInputError(f'Ожидался массив испытуемые × 2 × 4: {data.shape}')
    return rm_anova_two_way(data, ('noise', 'condition'))


# (метка, (шум, условие), (шум, условие)) — семь плановых сравнений
PLANNED_CONTRASTS = tuple(
    (
        f'{first.value} vs {second.value} ({noise.value})',
        (noise, first),
        (noise, second),
    )
    for noise in NOISE_LEVELS
    for first, second in (
        (Condition.AV, Condition.A),
        (Condition.AV, Condition.ML),
        (Condition.A, Condition.ML),
    )
) + (
    (
        'AV noise vs AV quiet',
        (Noise.noise, Condition.AV),
        (Noise.quiet, Condition.AV),
    ),
)


def _cell(data: np.ndarray, key: tuple[Noise, Condition]) -> np.ndarray:
    noise, condition = key
    return data[:, NOISE_LEVELS.index(noise), CONDITION_LEVELS.index(condition)]


def planned_contrasts(cell_means: np.ndarray) -> list[TestResult]:
    """Семь парных t-тестов на средних ячеек с поправкой Холма по всем семи."""
    cell_means = np.asarray(cell_means, dtype=float)
    raw = [
        paired_t(_cell(cell_means, first), _cell(cell_means, second), label)
        for label, first, second in PLANNED_CONTRASTS
    ]
    adjusted = holm_bonferroni([test.p_raw for test in raw])
    return [
        test.model_copy(update={'p_adjusted': max(float(p), test.p_raw)})
        for test, p in zip(raw, adjusted)
    ]


def cell_means_from_scores(
    scores: Sequence[TrackingScore],
) -> tuple[np.ndarray, list[str]]:
    """Средний r_z по испытуемому и ячейке: массив испытуемые × 2 × 4 (NaN — пусто)."""
    frame = pd.DataFrame(
        [
            {
                'subject_id': s.subject_id,
                'noise': s.noise.value,
                'condition': s.condition.value,
                'r_z': s.r_z,
            }
            for s in scores
        ]
    )
    if frame.empty:
        raise StatsInputError('Нет оценок для агрегации')
    means = frame.groupby(['subject_id', 'noise', 'condition'])['r_z'].mean()
    subjects = sorted(frame['subject_id'].unique())
    data = np.full((len(subjects), len(NOISE_LEVELS), len(CONDITION_LEVELS)), np.nan)
    for (subject, noise, condition), value in means.items():
        data[
            subjects.index(subject),
            NOISE_LEVELS.index(Noise(noise)),
            CONDITION_LEVELS.index(Condition(condition)),
        ] = value
    return data, subjects


def feature_correlations(
    profiles: pd.DataFrame, condition_means: pd.DataFrame
) -> pd.DataFrame:
    """Спирмен каждого признака диктора с каждым средним по условию и с AV − A.

    Обе таблицы индексированы speaker_id; берутся только общие дикторы.
    """
    speakers = profiles.index.intersection(condition_means.index)
    rows = []
    for feature in profiles.columns:
        for target in condition_means.columns:
            x = profiles.loc[speakers, feature].to_numpy(dtype=float)
            y = condition_means.loc[speakers, target].to_numpy(dtype=float)
            keep = np.isfinite(x) & np.isfinite(y)
            try:
                result = spearman(x[keep], y[keep])
            except (StatisticUndefinedError, StatsInputError) as exc:
                logger.warning(
                    'Спирмен {feature}~{target} пропущен: {err}',
                    feature=feature,
                    target=target,
                    err=exc,
                )
                continue
            rows.append(
                {
                    'feature': feature,
                    'target': target,
                    'rho': result.rho,
                    'p': result.p,
                    'n': result.n,
                    'reliable': result.reliable,
                }
            )
    columns = ['feature', 'target', 'rho', 'p', 'n', 'reliable']
    return pd.DataFrame(rows, columns=columns)


def stats_frame(anova: RmAnovaResult, tests: Sequence[TestResult]) -> pd.DataFrame:
    """Единая таблица отчёта: эффекты ANOVA и плановые сравнения."""
    rows = [
        {
            'kind': 'anova',
            'label': effect.effect,
            'statistic': effect.F,
            'df_num': effect.df_num,
            'df_den': effect.df_den,
            'epsilon': effect.epsilon,
            'p_raw': effect.p,
            'p_adjusted': effect.p,
            'effect_size': effect.eta_squared,
        }
        for effect in anova.effects.values()
    ]
    rows += [
        {
            'kind': 'paired_t',
            'label': test.label,
            'statistic': test.statistic,
            'df_num': test.df,
            'df_den': np.nan,
            'epsilon': np.nan,
            'p_raw': test.p_raw,
            'p_adjusted': test.p_adjusted,
            'effect_size': test.effect_size,
        }
        for test in tests
    ]
    return pd.DataFrame(rows)


def format_report(anova: RmAnovaResult, tests: Sequence[TestResult]) -> str:
    lines = ['RM-ANOVA (Greenhouse-Geisser)']
    for effect in anova.effects.values():
        lines.append(
            f'  {effect.effect:<18} F({effect.df_num:.2f}, {effect.df_den:.2f}) = '
            f'{effect.F:.3f}, p = {effect.p:.4g}, eps = {effect.epsilon:.3f}, '
            f'partial eta2 = {effect.eta_squared:.3f}'
        )
    lines.append('Paired t-tests (Holm over all tests)')
    for test in tests:
        lines.append(
            f'  {test.label:<24} t({test.df:g}) = {test.statistic:.3f}, '
            f'p = {test.p_raw:.4g}, p_holm = {test.p_adjusted:.4g}, '
            f'd = {test.effect_size:.3f}'
        )
    return '\n'.join(lines) + '\n'
