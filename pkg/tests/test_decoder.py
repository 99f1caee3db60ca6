import numpy as np
import pytest

from envtrack.constants import Condition, Noise
from envtrack.decoder import (
    DecoderModel,
    FisherDomainError,
    LagSpec,
    LagSpecError,
    SingularSystemError,
    TooFewTrialsError,
    TrialPair,
    TrialPairError,
    _choose_lambda,
    build_lag_matrix,
    chance_level,
    decode_window,
    derangement,
    fisher_z,
    fit_cell_model,
    loo_scores,
    ridge_fit,
    select_lambda,
    single_lag_sweep,
    speaker_condition_means,
    sweep_lags,
    window_model,
)
from envtrack.exceptions import InputValidationError
from envtrack.schemas import CellSpec, SimSpec, TrackingScore, clipped_fisher_z
from envtrack.sim import gen_condition_study

GRID = (1.0, 100.0)


def _study(kernel='single_lag', snr_db=10.0, n_trials=4, seed=0, **cell):
    spec = SimSpec(
        n_trials=n_trials,
        epoch_s=10.0,
        channels=8,
        seed=seed,
        cells=[
            CellSpec(
                condition='AV', noise='quiet', snr_db=snr_db, kernel=kernel, **cell
            )
        ],
    )
    return gen_condition_study(spec)


@pytest.fixture(scope='module')
def strong():
    return _study()


@pytest.fixture(scope='module')
def null():
    return _study(kernel='null', snr_db=None, seed=7)


class TestLagSpec:
    def test_window_of_interest(self):
        spec = LagSpec.from_window((200.0, 325.0))
        assert spec.lag_indices == tuple(range(13, 21))
        assert spec.label == '200:325'
        assert spec.max_lag == 20

    def test_single(self):
        spec = LagSpec.single(16)
        assert spec.label == '250.0'
        assert spec.n_lags == 1

    def test_sweep_covers_0_to_500(self):
        specs = sweep_lags()
        assert len(specs) == 33
        assert specs[-1].lag_ms[0] == 500.0

    @pytest.mark.parametrize(
        ('window', 'match'),
        [((300.0, 200.0), 'перевёрнуто'), ((-10.0, 100.0), 'Отрицательный')],
    )
    def test_invalid_window(self, window, match):
        with pytest.raises(LagSpecError, match=match):
            LagSpec.from_window(window)

    def test_window_between_lags(self):
        with pytest.raises(LagSpecError, match='нет ни одного лага'):
            LagSpec.from_window((1.0, 2.0))

    def test_lags_must_increase(self):
        with pytest.raises(LagSpecError):
            LagSpec((3, 1), (0.0, 50.0))


class TestBuildLagMatrix:
    def test_layout(self):
        eeg = np.arange(20.0).reshape(2, 10)
        design = build_lag_matrix(eeg, LagSpec((0, 2), (0.0, 31.25)))
        assert design.shape == (8, 5)
        # столбцы: канал 0 лаги 0, 2; канал 1 лаги 0, 2; свободный член
        np.testing.assert_array_equal(design[3], [3, 5, 13, 15, 1])

    def test_epoch_shorter_than_lag(self):
        with pytest.raises(LagSpecError, match='не длиннее'):
            build_lag_matrix(np.zeros((2, 5)), LagSpec.single(5))


class TestRidgeFit:
    @pytest.mark.parametrize('seed', range(20))
    def test_matches_augmented_least_squares(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((60, 6))
        X[:, -1] = 1.0
        y = rng.standard_normal(60)
        lam = 3.0
        penalty = np.diag([1.0, 1, 1, 1, 1, 0])
        augmented = np.vstack([X, np.sqrt(lam) * penalty])
        expected = np.linalg.lstsq(augmented, np.r_[y, np.zeros(6)], rcond=None)[0]
        np.testing.assert_allclose(ridge_fit(X, y, lam), expected, atol=1e-10)

    def test_zero_lambda_is_least_squares(self, rng):
        X = rng.standard_normal((40, 4))
        y = rng.standard_normal(40)
        np.testing.assert_allclose(ridge_fit(X, y, 0.0), np.linalg.pinv(X) @ y)

    def test_singular(self):
        X = np.zeros((10, 2))
        X[:, 1] = 1.0
        with pytest.raises(SingularSystemError):
            ridge_fit(X, np.ones(10), 0.0)

    def test_negative_lambda(self, rng):
        with pytest.raises(InputValidationError):
            ridge_fit(rng.standard_normal((5, 2)), np.zeros(5), -1.0)


class TestFisherZ:
    def test_value(self):
        assert fisher_z(0.5) == pytest.approx(np.arctanh(0.5))
        np.testing.assert_allclose(fisher_z(np.array([0.0, -0.5])), [0, -0.5493], 1e-4)

    def test_domain(self):
        with pytest.raises(FisherDomainError):
            fisher_z(1.0)

    def test_clipped_version_is_finite(self):
        assert np.isfinite(clipped_fisher_z(1.0))
        assert clipped_fisher_z(1.0) == pytest.approx(np.arctanh(1 - 1e-12))
        assert clipped_fisher_z(-1.0) == pytest.approx(-np.arctanh(1 - 1e-12))


class TestDerangement:
    @pytest.mark.parametrize('n', [2, 3, 10])
    def test_no_fixed_points(self, n):
        rng = np.random.default_rng(n)
        for _ in range(50):
            perm = derangement(n, rng)
            assert sorted(perm.tolist()) == list(range(n))
            assert not np.any(perm == np.arange(n))

    def test_single_element(self, rng):
        with pytest.raises(TooFewTrialsError):
            derangement(1, rng)


def test_trial_pair_length_mismatch():
    with pytest.raises(TrialPairError, match='огибающая'):
        TrialPair(np.zeros((2, 10)), np.zeros(9), Condition.A, Noise.quiet, 'SP1', 't')


class TestChooseLambda:
    def test_largest_within_one_se(self):
        mse = np.array([[1.0, 1.05, 2.0], [1.2, 1.1, 2.1], [0.8, 0.95, 1.9]])
        assert _choose_lambda(mse, [1.0, 10.0, 100.0], tie_se=1.0) == 10.0
        assert _choose_lambda(mse, [1.0, 10.0, 100.0], tie_se=0.0) == 1.0

    def test_exact_tie_prefers_larger(self):
        mse = np.array([[1.0, 1.0], [2.0, 2.0]])
        assert _choose_lambda(mse, [1.0, 10.0], tie_se=0.0) == 10.0


class TestLooScores:
    def test_strong_signal_is_tracked(self, strong):
        scores = loo_scores(strong, LagSpec.single(16), 1.0)
        assert [s.trial_id for s in scores] == [t.trial_id for t in strong]
        assert all(s.lag_or_window == '250.0' for s in scores)
        assert all(s.r > 0.5 for s in scores)

    def test_noise_only_near_zero(self, null):
        scores = loo_scores(null, LagSpec.single(16), 1.0)
        assert abs(np.mean([s.r for s in scores])) < 0.2

    def test_threads_do_not_change_scores(self, strong):
        one = loo_scores(strong, LagSpec.from_window((200, 325)), 10.0, threads=1)
        many = loo_scores(strong, LagSpec.from_window((200, 325)), 10.0, threads=3)
        assert [s.r for s in one] == [s.r for s in many]

    def test_cell_with_one_trial_skipped(self, strong, mocker):
        mock_logger = mocker.patch('envtrack.decoder.logger')
        assert loo_scores(strong[:1], LagSpec.single(16), 1.0) == []
        mock_logger.warning.assert_called_once()

    def test_lambda_per_cell(self, strong):
        key = strong[0].cell
        scores = loo_scores(strong, LagSpec.single(16), {key: 100.0})
        assert {s.ridge_lambda for s in scores} == {100.0}


class TestSelectLambda:
    def test_from_grid(self, strong):
        lam = select_lambda(strong, LagSpec.single(16), GRID)
        assert lam in GRID

    def test_default_is_strict_argmin(self, strong, mocker):
        # MSE, при котором правило одной SE выбрало бы λ=100
        mse = np.array([[1.0, 1.05], [1.2, 1.1], [0.8, 0.95]])
        mocker.patch(
            'envtrack.decoder._cell_loo', return_value=(np.zeros_like(mse), mse)
        )
        assert select_lambda(strong, LagSpec.single(16), GRID) == 1.0
        assert select_lambda(strong, LagSpec.single(16), GRID, tie_se=1.0) == 100.0

    def test_empty_grid(self, strong):
        with pytest.raises(InputValidationError, match='Пустая'):
            select_lambda(strong, LagSpec.single(16), [])

    def test_too_few_trials(self, strong):
        with pytest.raises(TooFewTrialsError):
            select_lambda(strong[:1], LagSpec.single(16), GRID)


class TestDecodeWindow:
    def test_scores_models_and_lambdas(self, strong):
        result = decode_window(strong, (200.0, 325.0), GRID)
        key = strong[0].cell
        assert len(result.scores) == len(strong)
        assert all(s.lag_or_window == '200:325' for s in result.scores)
        assert result.lambdas[key] in GRID
        model = result.models[key]
        assert isinstance(model, DecoderModel)
        assert model.topography().shape == (8, 8)
        assert np.mean([s.r_z for s in result.scores]) > 0.5

    def test_window_model_returns_scores(self, strong):
        scores = window_model(strong, grid=GRID)
        expected = decode_window(strong, grid=GRID).scores
        assert [s.r for s in scores] == [s.r for s in expected]

    def test_fit_cell_model_predicts_rows(self, strong):
        model = fit_cell_model(strong, LagSpec.from_window((200, 325)), 1.0)
        assert model.predict(strong[0].eeg).shape == (640 - 20,)
        assert model.training_trial_ids == tuple(t.trial_id for t in strong)


class TestSingleLagSweep:
    def test_peak_at_kernel_lag(self, strong):
        result = single_lag_sweep(strong, GRID)
        [curve] = result.curves
        assert curve.lag_ms.size == 33
        peak = curve.lag_ms[np.argmax(curve.mean_r_z)]
        assert abs(peak - 250.0) <= 15.625
        assert len(result.scores) == 33 * len(strong)

    def test_frame(self, strong):
        frame = single_lag_sweep(strong, GRID, max_lag_ms=62.5).frame()
        assert len(frame) == 5
        assert set(frame.columns) >= {'lag_ms', 'mean_r_z', 'ridge_lambda'}
        assert frame['condition'].unique().tolist() == ['AV']


class TestChanceLevel:
    def test_deterministic_and_below_true_tracking(self, strong):
        specs = [LagSpec.single(16)]
        first = chance_level(strong, 3, seed=5, lag_specs=specs, grid=[1.0])
        second = chance_level(strong, 3, seed=5, lag_specs=specs, grid=[1.0])
        key = (strong[0].cell, '250.0')
        values = first.distributions[key]
        assert values.shape == (3,)
        np.testing.assert_array_equal(values, second.distributions[key])
        true = np.mean([s.r_z for s in loo_scores(strong, specs[0], 1.0)])
        assert values.max() < true

    def test_frame_and_pooled(self, strong):
        result = chance_level(strong, 2, lag_specs=[LagSpec.single(16)], grid=[1.0])
        frame = result.frame()
        assert frame['n_perm'].tolist() == [2]
        assert 'chance_p95' in frame.columns
        assert result.pooled()['250.0'].shape == (2,)

    def test_needs_permutations(self, strong):
        with pytest.raises(InputValidationError):
            chance_level(strong, 0)


def test_speaker_condition_means():
    def score(speaker, condition, r):
        return TrackingScore(
            trial_id=f'{speaker}-{condition}-{r}',
            speaker_id=speaker,
            condition=condition,
            noise='quiet',
            lag_or_window='200:325',
            ridge_lambda=1.0,
            r=r,
            r_z=clipped_fisher_z(r),
            mse=1.0,
        )

    scores = [
        score('SP1', 'AV', 0.2),
        score('SP1', 'AV', 0.4),
        score('SP1', 'A', 0.1),
        score('SP2', 'AV', 0.3),
        score('SP2', 'A', 0.3),
    ]
    table = speaker_condition_means(scores)
    assert table.columns.tolist() == ['AV', 'A', 'AV-A']
    expected = (np.arctanh(0.2) + np.arctanh(0.4)) / 2 - np.arctanh(0.1)
    assert table.loc['SP1', 'AV-A'] == pytest.approx(expected)
    assert table.loc['SP2', 'AV-A'] == pytest.approx(0.0)
