import numpy as np
import pandas as pd
import pytest

from envtrack.decoder import SingularSystemError
from envtrack.formats import (
    read_scores,
    read_signal,
    read_table,
    write_signal,
    write_table,
)
from envtrack.main import EXIT_INVALID_INPUT, EXIT_NUMERIC_FAILURE, EXIT_OK, main
from envtrack.sim import gen_raw_recording


@pytest.fixture(scope='module')
def study(tmp_path_factory):
    """Три испытуемых, по два триала на ячейку 2×4."""
    out_dir = tmp_path_factory.mktemp('sim')
    code = main(
        [
            '--seed',
            '3',
            'simulate',
            '--out-dir',
            str(out_dir),
            '--n-subjects',
            '3',
            '--n-trials',
            '2',
            '--epoch-s',
            '8',
            '--channels',
            '6',
            '--snr-db',
            '5',
        ]
    )
    assert code == EXIT_OK
    return sorted(out_dir.glob('manifest_*.json'))


def _manifest_args(manifests):
    return [arg for path in manifests for arg in ('--manifest', str(path))]


class TestPipeline:
    def test_simulate_writes_manifest_per_subject(self, study):
        assert [path.name for path in study] == [
            'manifest_S01.json',
            'manifest_S02.json',
            'manifest_S03.json',
        ]

    def test_decode_then_stats(self, study, tmp_path):
        scores = tmp_path / 'scores.csv'
        weights = tmp_path / 'weights.csv'
        code = main(
            [
                'decode',
                *_manifest_args(study),
                '--lambda-grid',
                'custom:1,100',
                '--out',
                str(scores),
                '--weights',
                str(weights),
            ]
        )
        assert code == EXIT_OK
        rows = read_scores(scores)
        assert len(rows) == 3 * 8 * 2
        assert {row.lag_or_window for row in rows} == {'200:325'}
        # 6 каналов × 8 лагов окна на каждую из 24 ячеек
        assert len(read_table(weights, 'weights')) == 24 * 6 * 8

        stats = tmp_path / 'stats.csv'
        text = tmp_path / 'stats.txt'
        code = main(
            ['stats', '--scores', str(scores), '--out', str(stats), '--text', str(text)]
        )
        assert code == EXIT_OK
        assert len(read_table(stats, 'stats')) == 10
        assert 'Greenhouse-Geisser' in text.read_text(encoding='utf-8')

        svg = tmp_path / 'topo.svg'
        code = main(
            ['report', '--from', str(weights), '--style', 'topo', '--out', str(svg)]
        )
        assert code == EXIT_OK
        assert svg.read_text(encoding='utf-8').startswith('<?xml')

    def test_sweep_with_chance_then_report(self, study, tmp_path):
        sweep = tmp_path / 'sweep.csv'
        code = main(
            [
                '--seed',
                '1',
                'sweep',
                '--manifest',
                str(study[0]),
                '--lambda-grid',
                'custom:1',
                '--max-lag-ms',
                '62.5',
                '--chance-perm',
                '2',
                '--out',
                str(sweep),
            ]
        )
        assert code == EXIT_OK
        frame = read_table(sweep, 'sweep')
        assert len(frame) == 8 * 5
        assert frame['chance_p95'].notna().all()

        svg = tmp_path / 'fig2.svg'
        code = main(
            ['report', '--from', str(sweep), '--style', 'fig2', '--out', str(svg)]
        )
        assert code == EXIT_OK
        assert '<!-- envtrack fig2 data' in svg.read_text(encoding='utf-8')

    def test_chance_window(self, study, tmp_path):
        out = tmp_path / 'chance.csv'
        code = main(
            [
                'chance',
                '--manifest',
                str(study[0]),
                '--n-perm',
                '2',
                '--lambda-grid',
                'custom:1',
                '--out',
                str(out),
            ]
        )
        assert code == EXIT_OK
        frame = read_table(out, 'chance')
        assert len(frame) == 8
        assert frame['n_perm'].unique().tolist() == [2]

    def test_same_seed_same_files(self, tmp_path):
        args = ['simulate', '--n-trials', '1', '--epoch-s', '4', '--channels', '4']
        for name in ('a', 'b'):
            code = main(['--seed', '9', *args, '--out-dir', str(tmp_path / name)])
            assert code == EXIT_OK
        first = sorted((tmp_path / 'a' / 'data').iterdir())
        second = sorted((tmp_path / 'b' / 'data').iterdir())
        assert [p.name for p in first] == [p.name for p in second]
        assert all(a.read_bytes() == b.read_bytes() for a, b in zip(first, second))


class TestSignals:
    def test_envelope_from_wav(self, am_tone, write_wav, tmp_path):
        wav = write_wav('tone.wav', am_tone(1000.0, 4.0, 2.0, 16000.0))
        out = tmp_path / 'tone.env.bin'
        code = main(
            ['envelope', '--audio', str(wav), '--out', str(out), '--n-bands', '8']
        )
        assert code == EXIT_OK
        envelope = read_signal(out)
        assert envelope.rate == 64
        assert envelope.data.shape == (1, 128)

    def test_envelope_needs_out(self, am_tone, write_wav):
        wav = write_wav('tone.wav', am_tone(1000.0, 4.0, 2.0, 16000.0))
        assert main(['envelope', '--audio', str(wav)]) == EXIT_INVALID_INPUT

    def test_envelope_without_source(self):
        assert main(['envelope']) == EXIT_INVALID_INPUT

    def test_preproc_single_recording(self, tmp_path):
        rec = gen_raw_recording(60.0, seed=1)
        raw = tmp_path / 'raw.bin'
        write_signal(
            raw, rec.data, rec.rate, list(rec.channel_labels), rec.channel_positions
        )
        clean = tmp_path / 'clean.bin'
        rejections = tmp_path / 'rejections.csv'
        code = main(
            [
                'preproc',
                '--eeg',
                str(raw),
                '--out',
                str(clean),
                '--rejections',
                str(rejections),
            ]
        )
        assert code == EXIT_OK
        result = read_signal(clean)
        assert result.rate == 64
        assert result.data.shape == (24, 3840)
        assert result.positions is not None
        assert read_table(rejections, 'rejections').columns.tolist() == [
            'recording',
            'epoch_index',
            'start_s',
            'trial_id',
            'reason',
        ]


def test_profiles_correlations_need_scores(tmp_path):
    segments = pd.DataFrame(
        {
            'speaker_id': ['SP1', 'SP1', 'SP2', 'SP2', 'SP3', 'SP3'],
            'segment': [0, 1, 0, 1, 0, 1],
            'meanPitch': [100.0, 120.0, 200.0, 220.0, 150.0, 150.0],
        }
    )
    path = tmp_path / 'segments.csv'
    write_table(segments, path, 'segments')
    argv = ['profiles', '--segments', str(path), '--out', str(tmp_path / 'p.csv')]
    assert main([*argv, '--radar', str(tmp_path / 'radar.csv')]) == EXIT_OK
    assert len(read_table(tmp_path / 'radar.csv', 'radar')) == 3
    code = main([*argv, '--correlations', str(tmp_path / 'c.csv')])
    assert code == EXIT_INVALID_INPUT


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        argv = ['stats', '--scores', str(tmp_path / 'none.csv'), '--out', 'x.csv']
        assert main(argv) == EXIT_INVALID_INPUT

    def test_bad_lambda_grid(self, study, tmp_path):
        argv = [
            'decode',
            '--manifest',
            str(study[0]),
            '--lambda-grid',
            'golden',
            '--out',
            str(tmp_path / 'scores.csv'),
        ]
        assert main(argv) == EXIT_INVALID_INPUT

    def test_zero_permutations_rejected(self, study, tmp_path):
        argv = [
            'chance',
            '--manifest',
            str(study[0]),
            '--n-perm',
            '0',
            '--out',
            str(tmp_path / 'chance.csv'),
        ]
        assert main(argv) == EXIT_INVALID_INPUT
        assert not (tmp_path / 'chance.csv').exists()

    def test_threads_must_be_positive(self):
        argv = ['--threads', '0', 'stats', '--scores', 'a.csv', '--out', 'b.csv']
        assert main(argv) == EXIT_INVALID_INPUT

    @pytest.mark.parametrize(
        'error', [SingularSystemError('сингулярная система'), np.linalg.LinAlgError()]
    )
    def test_numeric_failure(self, mocker, error):
        mocker.patch('envtrack.commands.analysis.run_stats', side_effect=error)
        argv = ['stats', '--scores', 'a.csv', '--out', 'b.csv']
        assert main(argv) == EXIT_NUMERIC_FAILURE

    def test_unexpected_error_goes_to_hawk(self, mocker):
        mock_hawk = mocker.patch('envtrack.main.hawk')
        mock_logger = mocker.patch('envtrack.main.logger')
        mocker.patch(
            'envtrack.commands.analysis.run_stats', side_effect=RuntimeError('boom')
        )
        with pytest.raises(RuntimeError, match='boom'):
            main(['stats', '--scores', 'a.csv', '--out', 'b.csv'])
        mock_hawk.send.assert_called_once()
        mock_logger.exception.assert_called_once_with('Exception')

    def test_hawk_failure_keeps_original_error(self, mocker):
        mock_hawk = mocker.patch('envtrack.main.hawk')
        mock_hawk.send.side_effect = ConnectionError('hawk down')
        mocker.patch(
            'envtrack.commands.analysis.run_stats', side_effect=RuntimeError('boom')
        )
        # наружу уходит исходная ошибка, а не сбой отправки
        with pytest.raises(RuntimeError, match='boom'):
            main(['stats', '--scores', 'a.csv', '--out', 'b.csv'])


def test_verbose_switches_to_debug(mocker):
    mock_level = mocker.patch('envtrack.main.set_stderr_level')
    mocker.patch('envtrack.commands.analysis.run_stats')
    assert main(['--verbose', 'stats', '--scores', 'a', '--out', 'b']) == EXIT_OK
    mock_level.assert_called_once_with('DEBUG')
