import pytest

from envtrack.formats import read_table
from scripts.snr_recovery_study import SNR_LEVELS_DB, count_inversions, main


@pytest.mark.parametrize(
    ('values', 'expected'),
    [([0.1, 0.2, 0.3, 0.4], 0), ([0.1, 0.3, 0.2, 0.4], 1), ([0.2, 0.2], 1)],
)
def test_count_inversions(values, expected):
    assert count_inversions(values) == expected


@pytest.mark.slow
def test_small_study(tmp_path, mocker):
    mocker.patch('scripts.snr_recovery_study.CHANCE_PERMUTATIONS', 5)
    out = tmp_path / 'recovery.csv'
    frame = main(out, seeds=1, n_trials=3, epoch_s=10.0)
    assert frame['snr_db'].tolist() == list(SNR_LEVELS_DB)
    assert len(read_table(out, 'recovery')) == len(SNR_LEVELS_DB)
    # при +20 дБ декодер восстанавливает огибающую почти без ошибок
    assert frame['mean_r'].iloc[-1] > 0.5
