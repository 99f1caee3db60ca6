"""Обратная модель (реконструкция стимула) на лагах ЭЭГ.

Строка t матрицы плана содержит eeg[c, t + ℓ] для всех каналов c и лагов ℓ,
последний столбец — свободный член; цель — огибающая в момент t.

Leave-one-out внутри ячейки (испытуемый × шум × условие): для отложенного
триала обучаются модели на каждом из остальных триалов, их веса усредняются.
Признаки и цель стандартизуются по пулу обучающих триалов фолда. Всё
считается через достаточные статистики триалов (ZᵀZ, Zᵀy), поэтому сетка λ
и стандартизация не требуют повторного построения матриц.
"""

import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import linalg

from envtrack.constants import (
    CONDITION_LEVELS,
    ENVELOPE_RATE,
    LAG_STEP_MS,
    NOISE_LEVELS,
    PAPER_LAMBDA_GRID,
    SWEEP_MAX_LAG_MS,
    WINDOW_OF_INTEREST_MS,
    Condition,
    Noise,
)
from envtrack.exceptions import InputValidationError, NumericFailure
from envtrack.logging import logger
from envtrack.schemas import TrackingScore, clipped_fisher_z
from envtrack.stats import StatisticUndefinedError, pearson_r
from envtrack.utils import parallel_map

CellKey = tuple[str, Noise, Condition]


class LagSpecError(InputValidationError):
    pass


class TrialPairError(InputValidationError):
    pass


class TooFewTrialsError(InputValidationError):
    pass


class FisherDomainError(InputValidationError):
    pass


class SingularSystemError(NumericFailure):
    pass


class DegenerateTargetError(NumericFailure):
    pass


@dataclass(frozen=True)
class LagSpec:
    lag_indices: tuple[int, ...]
    window_ms: tuple[float, float]
    rate: float = ENVELOPE_RATE

    def __post_init__(self):
        lags = tuple(int(k) for k in self.lag_indices)
        if not lags:
            raise LagSpecError(f'Пустой набор лагов для окна {self.window_ms}')
        if any(k < 0 for k in lags) or list(lags) != sorted(set(lags)):
            raise LagSpecError(f'Лаги должны быть >= 0 и строго возрастать: {lags}')
        object.__setattr__(self, 'lag_indices', lags)

    @classmethod
    def from_window(
        cls, window_ms: tuple[float, float], rate: float = ENVELOPE_RATE
    ) -> 'LagSpec':
        """Лаги k с lo ≤ k·шаг ≤ hi (закрытый интервал)."""
        lo, hi = window_ms
        if lo > hi:
            raise LagSpecError(f'Окно перевёрнуто: {lo} > {hi} мс')
        if lo < 0:
            raise LagSpecError(f'Отрицательный лаг в окне: {lo} мс')
        step = 1000.0 / rate
        lags = tuple(
            k for k in range(int(np.floor(hi / step)) + 1) if lo <= k * step <= hi
        )
        if not lags:
            raise LagSpecError(f'В окне {lo}:{hi} мс нет ни одного лага')
        return cls(lags, (float(lo), float(hi)), rate)

    @classmethod
    def single(cls, lag: int, rate: float = ENVELOPE_RATE) -> 'LagSpec':
        ms = lag * 1000.0 / rate
        return cls((lag,), (ms, ms), rate)

    @property
    def n_lags(self) -> int:
        return len(self.lag_indices)

    @property
    def max_lag(self) -> int:
        return self.lag_indices[-1]

    @property
    def lag_ms(self) -> np.ndarray:
        return np.array(self.lag_indices) * 1000.0 / self.rate

    @property
    def label(self) -> str:
        if self.n_lags == 1:
            return f'{self.lag_ms[0]}'
        return f'{self.window_ms[0]:g}:{self.window_ms[1]:g}'


def sweep_lags(max_lag_ms: float = SWEEP_MAX_LAG_MS) -> list[LagSpec]:
    """Однолаговые спецификации 0..max_lag_ms (33 точки для 500 мс)."""
    count = int(np.floor(max_lag_ms / LAG_STEP_MS)) + 1
    return [LagSpec.single(k) for k in range(count)]


@dataclass(frozen=True, eq=False)
class TrialPair:
    """30-с эпоха ЭЭГ (64 Гц) и огибающая стимула того же триала."""

    eeg: np.ndarray
    envelope: np.ndarray
    condition: Condition
    noise: Noise
    speaker_id: str
    trial_id: str
    subject_id: str = 'S01'

    def __post_init__(self):
        eeg = np.atleast_2d(np.asarray(self.eeg, dtype=float))
        envelope = np.asarray(self.envelope, dtype=float)
        if envelope.ndim != 1:
            raise TrialPairError(f'{self.trial_id}: огибающая должна быть 1-D')
        if eeg.shape[1] != envelope.size:
            raise TrialPairError(
                f'{self.trial_id}: ЭЭГ {eeg.shape[1]} отсч., огибающая {envelope.size}'
            )
        object.__setattr__(self, 'eeg', eeg)
        object.__setattr__(self, 'envelope', envelope)
        object.__setattr__(self, 'condition', Condition(self.condition))
        object.__setattr__(self, 'noise', Noise(self.noise))

    @property
    def cell(self) -> CellKey:
        return self.subject_id, self.noise, self.condition


@dataclass(frozen=True, eq=False)
class DecoderModel:
    """Усреднённые веса обратной модели в единицах исходных данных.

    Предсказание Z·weights даётся в единицах стандартизованной огибающей.
    """

    weights: np.ndarray
    ridge_lambda: float
    lag_spec: LagSpec
    training_trial_ids: tuple[str, ...]
    n_channels: int

    def topography(self) -> np.ndarray:
        """Веса без свободного члена: каналы × лаги."""
        return self.weights[:-1].reshape(self.n_channels, self.lag_spec.n_lags)

    def predict(self, eeg: np.ndarray) -> np.ndarray:
        return build_lag_matrix(eeg, self.lag_spec) @ self.weights


@dataclass(frozen=True, eq=False)
class LagCurve:
    cell: CellKey
    lag_ms: np.ndarray
    mean_r_z: np.ndarray
    lambdas: np.ndarray
    n_trials: int


@dataclass(frozen=True, eq=False)
class SweepResult:
    curves: list[LagCurve]
    scores: list[TrackingScore]

    def frame(self) -> pd.DataFrame:
        rows = []
        for curve in self.curves:
            subject, noise, condition = curve.cell
            for lag_ms, r_z, lam in zip(curve.lag_ms, curve.mean_r_z, curve.lambdas):
                rows.append(
                    {
                        'subject_id': subject,
                        'noise': noise.value,
                        'condition': condition.value,
                        'lag_ms': lag_ms,
                        'mean_r_z': r_z,
                        'ridge_lambda': lam,
                        'n_trials': curve.n_trials,
                    }
                )
        return pd.DataFrame(rows)


@dataclass(frozen=True, eq=False)
class WindowDecode:
    scores: list[TrackingScore]
    lambdas: dict[CellKey, float]
    models: dict[CellKey, DecoderModel]


@dataclass(frozen=True, eq=False)
class ChanceResult:
    """Средний r_z ячейки для каждой перестановки: (ячейка, лаг) -> n_perm."""

    distributions: dict[tuple[CellKey, str], np.ndarray]
    n_perm: int

    def frame(self) -> pd.DataFrame:
        rows = []
        for (cell, label), values in self.distributions.items():
            subject, noise, condition = cell
            rows.append(
                {
                    'subject_id': subject,
                    'noise': noise.value,
                    'condition': condition.value,
                    'lag_or_window': label,
                    'chance_mean': float(values.mean()),
                    'chance_sd': float(values.std(ddof=1)) if values.size > 1 else 0.0,
                    'chance_p95': float(np.percentile(values, 95)),
                    'n_perm': self.n_perm,
                }
            )
        return pd.DataFrame(rows)

    def pooled(self) -> dict[str, np.ndarray]:
        """Среднее по ячейкам для каждой перестановки, по лагу/окну."""
        by_label: dict[str, list[np.ndarray]] = {}
        for (_, label), values in self.distributions.items():
            by_label.setdefault(label, []).append(values)
        return {label: np.mean(values, axis=0) for label, values in by_label.items()}


# --- линейная алгебра --------------------------------------------------------


def build_lag_matrix(eeg: np.ndarray, lag_spec: LagSpec) -> np.ndarray:
    """Матрица плана (n − max_lag) × (каналы·лаги + 1), свободный член последним."""
    eeg = np.atleast_2d(np.asarray(eeg, dtype=float))
    n_channels, n_samples = eeg.shape
    rows = n_samples - lag_spec.max_lag
    if rows < 1:
        raise LagSpecError(
            f'Эпоха ({n_samples} отсч.) не длиннее максимального лага '
            f'({lag_spec.max_lag})'
        )
    lagged = np.stack([eeg[:, lag : lag + rows] for lag in lag_spec.lag_indices], 1)
    design = np.empty((rows, n_channels * lag_spec.n_lags + 1))
    design[:, :-1] = lagged.reshape(n_channels * lag_spec.n_lags, rows).T
    design[:, -1] = 1.0
    return design


def _penalty(n_columns: int, intercept: bool) -> np.ndarray:
    penalty = np.ones(n_columns)
    if intercept:
        penalty[-1] = 0.0
    return penalty


def ridge_fit(
    X: np.ndarray, y: np.ndarray, ridge_lambda: float, intercept: bool = True
) -> np.ndarray:
    """w = (XᵀX + λD)⁻¹Xᵀy, D — единичная без штрафа на свободный член."""
    if ridge_lambda < 0:
        raise InputValidationError(f'λ должна быть >= 0: {ridge_lambda}')
    X = np.asarray(X, dtype=float)
    gram = X.T @ X + ridge_lambda * np.diag(_penalty(X.shape[1], intercept))
    with warnings.catch_warnings():
        warnings.simplefilter('error', linalg.LinAlgWarning)
        try:
            return linalg.solve(gram, X.T @ np.asarray(y, float), assume_a='pos')
        except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
            raise SingularSystemError(
                f'Вырожденная система ridge при λ={ridge_lambda}: {exc}'
            ) from exc


def fisher_z(r):
    """atanh(r) для |r| < 1."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(np.abs(r_arr) >= 1):
        raise FisherDomainError(f'Fisher z определён только для |r| < 1: {r}')
    z = np.arctanh(r_arr)
    return float(z) if z.ndim == 0 else z


# --- достаточные статистики и фолды ------------------------------------------


@dataclass(frozen=True, eq=False)
class _TrialStats:
    design: np.ndarray
    target: np.ndarray
    gram: np.ndarray
    cross: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.target.size


def _trial_stats(eeg: np.ndarray, envelope: np.ndarray, lag_spec: LagSpec):
    design = build_lag_matrix(eeg, lag_spec)
    target = envelope[: design.shape[0]]
    return _TrialStats(design, target, design.T @ design, design.T @ target)


def _retarget(stats: _TrialStats, envelope: np.ndarray) -> _TrialStats:
    target = envelope[: stats.n_rows]
    return replace(stats, target=target, cross=stats.design.T @ target)


def _standardizer(stats: Sequence[_TrialStats], train: Sequence[int]):
    """Аффинная матрица A стандартизации признаков по пулу `train` и μ, σ цели."""
    n = 0
    gram = np.zeros_like(stats[train[0]].gram)
    y_sum = y_sq = 0.0
    for i in train:
        n += stats[i].n_rows
        gram += stats[i].gram
        y_sum += stats[i].target.sum()
        y_sq += stats[i].target @ stats[i].target
    mu = gram[-1, :-1] / n
    var = np.maximum(np.diag(gram)[:-1] / n - mu**2, 0.0)
    sigma = np.sqrt(var)
    # постоянный столбец (нулевой канал) исключается: вес останется нулевым
    live = (sigma > 0) & (sigma > 1e-7 * np.abs(mu))
    inv = np.zeros_like(sigma)
    inv[live] = 1.0 / sigma[live]
    transform = np.zeros_like(gram)
    transform[np.arange(mu.size), np.arange(mu.size)] = inv
    transform[-1, :-1] = -mu * inv
    transform[-1, -1] = 1.0

    mu_y = y_sum / n
    var_y = y_sq / n - mu_y**2
    if not var_y > 1e-14 * max(mu_y**2, np.finfo(float).tiny):
        raise DegenerateTargetError('Огибающая обучающих триалов постоянна')
    return transform, mu_y, np.sqrt(var_y)


def _averaged_weights(
    stats: Sequence[_TrialStats],
    train: Sequence[int],
    lambdas: Sequence[float],
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Средние по обучающим триалам веса (λ × P) в стандартизованном базисе."""
    transform, mu_y, sigma_y = _standardizer(stats, train)
    grams = np.stack([transform.T @ stats[i].gram @ transform for i in train])
    cross = np.stack(
        [
            transform.T @ (stats[i].cross - mu_y * stats[i].gram[-1]) / sigma_y
            for i in train
        ]
    )
    penalty = np.diag(_penalty(grams.shape[-1], intercept=True))
    weights = np.empty((len(lambdas), grams.shape[-1]))
    for j, lam in enumerate(lambdas):
        try:
            solved = np.linalg.solve(grams + lam * penalty, cross[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f'Вырожденная система ridge при λ={lam}: {exc}'
            ) from exc
        weights[j] = solved.mean(axis=0)
    return weights, transform, mu_y, sigma_y


def _score(prediction: np.ndarray, target: np.ndarray) -> float:
    try:
        return pearson_r(prediction, target)
    except StatisticUndefinedError:
        # постоянная реконструкция (все веса сжаты в ноль)
        return 0.0


def _cell_loo(
    stats: Sequence[_TrialStats],
    lambdas: Sequence[float],
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """LOO для одной ячейки: r и MSE (триалы × λ)."""
    n = len(stats)

    def fold(k: int) -> tuple[np.ndarray, np.ndarray]:
        train = [i for i in range(n) if i != k]
        weights, transform, mu_y, sigma_y = _averaged_weights(stats, train, lambdas)
        held = stats[k]
        predictions = held.design @ (transform @ weights.T)
        standardized = (held.target - mu_y) / sigma_y
        r = np.array([_score(p, held.target) for p in predictions.T])
        mse = np.mean((predictions - standardized[:, None]) ** 2, axis=0)
        return r, mse

    results = parallel_map(fold, range(n), threads)
    return np.array([r for r, _ in results]), np.array([m for _, m in results])


def _choose_lambda(mse: np.ndarray, lambdas: Sequence[float], tie_se: float) -> float:
    """Наибольшая λ со средним MSE не дальше tie_se стандартных ошибок от минимума."""
    mean = mse.mean(axis=0)
    se = np.zeros_like(mean)
    if len(mse) > 1:
        se = mse.std(axis=0, ddof=1) / np.sqrt(len(mse))
    best = int(np.argmin(mean))
    threshold = mean[best] + tie_se * se[best]
    eligible = [j for j in range(len(lambdas)) if mean[j] <= threshold]
    return float(max(lambdas[j] for j in eligible))


def _group_cells(trials: Sequence[TrialPair]) -> dict[CellKey, list[TrialPair]]:
    cells: dict[CellKey, list[TrialPair]] = {}
    for trial in trials:
        cells.setdefault(trial.cell, []).append(trial)

    def order(key: CellKey):
        subject, noise, condition = key
        return subject, NOISE_LEVELS.index(noise), CONDITION_LEVELS.index(condition)

    return {key: cells[key] for key in sorted(cells, key=order)}


def _usable_cells(trials: Sequence[TrialPair]) -> dict[CellKey, list[TrialPair]]:
    usable = {}
    for key, members in _group_cells(trials).items():
        if len(members) < 2:
            logger.warning(
                'Ячейка {cell} пропущена: триалов {n} < 2',
                cell=_cell_name(key),
                n=len(members),
            )
            continue
        usable[key] = members
    return usable


def _cell_name(key: CellKey) -> str:
    subject, noise, condition = key
    return f'{subject}/{noise.value}/{condition.value}'


def _make_scores(
    members: Sequence[TrialPair],
    r: np.ndarray,
    mse: np.ndarray,
    lag_spec: LagSpec,
    ridge_lambda: float,
) -> list[TrackingScore]:
    scores = []
    for trial, r_k, mse_k in zip(members, r, mse):
        r_k = float(np.clip(r_k, -1.0, 1.0))
        scores.append(
            TrackingScore(
                trial_id=trial.trial_id,
                subject_id=trial.subject_id,
                speaker_id=trial.speaker_id,
                condition=trial.condition,
                noise=trial.noise,
                lag_or_window=lag_spec.label,
                ridge_lambda=ridge_lambda,
                r=r_k,
                r_z=clipped_fisher_z(r_k),
                mse=float(mse_k),
            )
        )
    return scores


def _resolve_lambda(ridge_lambda, key: CellKey) -> float:
    if isinstance(ridge_lambda, Mapping):
        return float(ridge_lambda[key])
    return float(ridge_lambda)


# --- операции ----------------------------------------------------------------


def loo_scores(
    trials: Sequence[TrialPair],
    lag_spec: LagSpec,
    ridge_lambda: float | Mapping[CellKey, float],
    threads: int | None = None,
) -> list[TrackingScore]:
    """LOO-оценки всех триалов; λ общая или своя для каждой ячейки."""
    scores = []
    for key, members in _usable_cells(trials).items():
        lam = _resolve_lambda(ridge_lambda, key)
        stats = [_trial_stats(t.eeg, t.envelope, lag_spec) for t in members]
        r, mse = _cell_loo(stats, [lam], threads)
        scores.extend(_make_scores(members, r[:, 0], mse[:, 0], lag_spec, lam))
    return scores


def select_lambda(
    trials: Sequence[TrialPair],
    lag_spec: LagSpec,
    grid: Sequence[float] = PAPER_LAMBDA_GRID,
    tie_se: float = 0.0,
    threads: int | None = None,
) -> float:
    """λ из сетки по среднему LOO MSE, равенства — в пользу большей λ.

    «Равными» считаются λ, чей средний MSE не хуже минимума более чем на
    `tie_se` стандартных ошибок; по умолчанию (0) — строгий argmin.
    """
    grid = [float(lam) for lam in grid]
    if not grid:
        raise InputValidationError('Пустая сетка λ')
    if any(lam < 0 for lam in grid):
        raise InputValidationError(f'λ должны быть >= 0: {grid}')
    cells = _usable_cells(trials)
    if not cells:
        raise TooFewTrialsError('Для выбора λ нужно >= 2 триалов в ячейке')
    mse_all = []
    for members in cells.values():
        stats = [_trial_stats(t.eeg, t.envelope, lag_spec) for t in members]
        _, mse = _cell_loo(stats, grid, threads)
        mse_all.append(mse)
    return _choose_lambda(np.vstack(mse_all), grid, tie_se)


def fit_cell_model(
    trials: Sequence[TrialPair], lag_spec: LagSpec, ridge_lambda: float
) -> DecoderModel:
    """Средние веса по всем триалам ячейки (для топографий декодера)."""
    if not trials:
        raise TooFewTrialsError('Нет триалов для модели')
    stats = [_trial_stats(t.eeg, t.envelope, lag_spec) for t in trials]
    weights, transform, _, _ = _averaged_weights(
        stats, list(range(len(stats))), [ridge_lambda]
    )
    return DecoderModel(
        weights=transform @ weights[0],
        ridge_lambda=ridge_lambda,
        lag_spec=lag_spec,
        training_trial_ids=tuple(t.trial_id for t in trials),
        n_channels=trials[0].eeg.shape[0],
    )


def decode_window(
    trials: Sequence[TrialPair],
    window_ms: tuple[float, float] = WINDOW_OF_INTEREST_MS,
    grid: Sequence[float] = PAPER_LAMBDA_GRID,
    tie_se: float = 0.0,
    threads: int | None = None,
) -> WindowDecode:
    """Многолаговая модель окна: выбор λ по ячейке, затем LOO-оценки."""
    lag_spec = LagSpec.from_window(window_ms)
    scores, lambdas, models = [], {}, {}
    for key, members in _usable_cells(trials).items():
        stats = [_trial_stats(t.eeg, t.envelope, lag_spec) for t in members]
        r, mse = _cell_loo(stats, list(grid), threads)
        lam = _choose_lambda(mse, list(grid), tie_se)
        j = list(grid).index(lam)
        scores.extend(_make_scores(members, r[:, j], mse[:, j], lag_spec, lam))
        lambdas[key] = lam
        models[key] = fit_cell_model(members, lag_spec, lam)
        logger.info(
            'Окно {window}: {cell} λ={lam:g}, средний r_z={r_z:.4f}',
            window=lag_spec.label,
            cell=_cell_name(key),
            lam=lam,
            r_z=float(np.mean([clipped_fisher_z(v) for v in r[:, j]])),
        )
    return WindowDecode(scores, lambdas, models)


def window_model(
    trials: Sequence[TrialPair],
    window_ms: tuple[float, float] = WINDOW_OF_INTEREST_MS,
    grid: Sequence[float] = PAPER_LAMBDA_GRID,
    threads: int | None = None,
) -> list[TrackingScore]:
    return decode_window(trials, window_ms, grid, threads=threads).scores


def single_lag_sweep(
    trials: Sequence[TrialPair],
    grid: Sequence[float] = PAPER_LAMBDA_GRID,
    max_lag_ms: float = SWEEP_MAX_LAG_MS,
    tie_se: float = 0.0,
    threads: int | None = None,
) -> SweepResult:
    """Однолаговые модели 0..500 мс: средний r_z по ячейке на каждом лаге."""
    grid = list(grid)
    specs = sweep_lags(max_lag_ms)
    curves, scores = [], []
    for key, members in _usable_cells(trials).items():
        mean_r_z, lambdas = [], []
        for spec in specs:
            stats = [_trial_stats(t.eeg, t.envelope, spec) for t in members]
            r, mse = _cell_loo(stats, grid, threads)
            lam = _choose_lambda(mse, grid, tie_se)
            j = grid.index(lam)
            cell_scores = _make_scores(members, r[:, j], mse[:, j], spec, lam)
            scores.extend(cell_scores)
            mean_r_z.append(float(np.mean([s.r_z for s in cell_scores])))
            lambdas.append(lam)
        curve = LagCurve(
            cell=key,
            lag_ms=np.array([spec.lag_ms[0] for spec in specs]),
            mean_r_z=np.array(mean_r_z),
            lambdas=np.array(lambdas),
            n_trials=len(members),
        )
        peak = int(np.argmax(curve.mean_r_z))
        logger.info(
            'Свип {cell}: пик {lag} мс, r_z={r_z:.4f}',
            cell=_cell_name(key),
            lag=curve.lag_ms[peak],
            r_z=curve.mean_r_z[peak],
        )
        curves.append(curve)
    return SweepResult(curves, scores)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Равномерная перестановка без неподвижных точек (выборка с отбраковкой)."""
    if n < 2:
        raise TooFewTrialsError(f'Беспорядок невозможен для {n} элементов')
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def chance_level(
    trials: Sequence[TrialPair],
    n_perm: int,
    seed: int = 0,
    lag_specs: Sequence[LagSpec] | None = None,
    lambdas: Mapping[tuple[CellKey, str], float] | None = None,
    grid: Sequence[float] = PAPER_LAMBDA_GRID,
    tie_se: float = 0.0,
    threads: int | None = None,
) -> ChanceResult:
    """Распределение среднего r_z ячейки при перепутанных парах ЭЭГ↔огибающая.

    λ для (ячейка, лаг) берётся из `lambdas` или выбирается на истинных парах;
    на перестановках она не перевыбирается. Перестановки — беспорядки внутри
    ячейки из ГПСЧ `seed`.
    """
    if n_perm < 1:
        raise InputValidationError(f'n_perm должно быть >= 1: {n_perm}')
    specs = list(lag_specs) if lag_specs is not None else sweep_lags()
    grid = list(grid)
    rng = np.random.default_rng(seed)
    cells = _usable_cells(trials)
    for key, members in cells.items():
        if len({t.envelope.size for t in members}) > 1:
            raise TrialPairError(
                f'Ячейка {_cell_name(key)}: для перестановок нужны триалы одной длины'
            )
    # перестановки фиксируются заранее в порядке (перестановка, ячейка)
    perms = [
        {key: derangement(len(members), rng) for key, members in cells.items()}
        for _ in range(n_perm)
    ]
    distributions = {}
    for key, members in cells.items():
        for spec in specs:
            stats = [_trial_stats(t.eeg, t.envelope, spec) for t in members]
            if lambdas is not None:
                lam = float(lambdas[(key, spec.label)])
            else:
                _, mse = _cell_loo(stats, grid, threads)
                lam = _choose_lambda(mse, grid, tie_se)
            values = np.empty(n_perm)
            for p in range(n_perm):
                perm = perms[p][key]
                shuffled = [
                    _retarget(stats[k], members[perm[k]].envelope)
                    for k in range(len(members))
                ]
                r, _ = _cell_loo(shuffled, [lam], threads)
                values[p] = np.mean([clipped_fisher_z(v) for v in r[:, 0]])
            distributions[(key, spec.label)] = values
        logger.info(
            'Уровень случайности {cell}: {n} перестановок',
            cell=_cell_name(key),
            n=n_perm,
        )
    return ChanceResult(distributions, n_perm)


def speaker_condition_means(scores: Sequence[TrackingScore]) -> pd.DataFrame:
    """Средний r_z диктор × условие (по всем уровням шума) и выигрыш AV − A."""
    frame = pd.DataFrame(
        [
            {
                'speaker_id': s.speaker_id,
                'condition': s.condition.value,
                'r_z': s.r_z,
            }
            for s in scores
        ]
    )
    if frame.empty:
        return pd.DataFrame()
    table = frame.pivot_table(
        index='speaker_id', columns='condition', values='r_z', aggfunc='mean'
    )
    table = table.reindex(
        columns=[c.value for c in CONDITION_LEVELS if c.value in table.columns]
    )
    if {'AV', 'A'} <= set(table.columns):
        table['AV-A'] = table['AV'] - table['A']
    return table.sort_index()
