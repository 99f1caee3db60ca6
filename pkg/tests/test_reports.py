import re

import numpy as np
import pandas as pd
import pytest

from envtrack.formats import write_scores, write_table
from envtrack.reports import (
    ReportInputError,
    _data_comment,
    build_report,
    fig2_svg,
    lag_curves,
    radar_svg,
    write_report,
)
from envtrack.schemas import TrackingScore, clipped_fisher_z

LAGS = np.arange(33) * 15.625


def _polylines(svg: str) -> list[tuple[str, list[float]]]:
    """(data-label, y-координаты) каждой линии."""
    found = re.findall(r'data-label="([^"]*)" points="([^"]*)"', svg)
    return [
        (label, [float(p.split(',')[1]) for p in points.split()])
        for label, points in found
    ]


def _sweep(value=0.0) -> pd.DataFrame:
    rows = [
        {'noise': noise, 'condition': condition, 'lag_ms': lag, 'mean_r_z': value}
        for noise in ('noise', 'quiet')
        for condition in ('AV', 'A')
        for lag in LAGS
    ]
    return pd.DataFrame(rows)


def _score(trial, speaker, condition, label, r):
    return TrackingScore(
        trial_id=trial,
        speaker_id=speaker,
        condition=condition,
        noise='quiet',
        lag_or_window=label,
        ridge_lambda=1.0,
        r=r,
        r_z=clipped_fisher_z(r),
        mse=1.0,
    )


class TestFig2:
    def test_all_zero_curves_are_flat(self):
        svg = fig2_svg(_sweep(0.0))
        lines = _polylines(svg)
        assert len(lines) == 4
        for _, ys in lines:
            assert len(ys) == 33
            assert len(set(ys)) == 1
        assert svg.startswith('<?xml')

    def test_chance_lines_are_dashed(self):
        chance = pd.DataFrame(
            {'noise': 'quiet', 'condition': 'AV', 'lag_ms': LAGS, 'chance_p95': 0.05}
        )
        svg = fig2_svg(_sweep(0.2), chance)
        labels = [label for label, _ in _polylines(svg)]
        assert 'AV случай' in labels
        assert svg.count('stroke-dasharray') == 1

    def test_report_from_sweep_and_chance(self, tmp_path):
        sweep = _sweep(0.1).assign(subject_id='S01', ridge_lambda=1.0, n_trials=4)
        write_table(sweep, tmp_path / 'sweep.csv', 'sweep')
        chance = pd.DataFrame(
            {
                'subject_id': 'S01',
                'noise': 'noise',
                'condition': 'A',
                'lag_or_window': [f'{lag}' for lag in LAGS] + ['200:325'],
                'chance_mean': 0.0,
                'chance_sd': 0.01,
                'chance_p95': 0.02,
                'n_perm': 10,
            }
        )
        write_table(chance, tmp_path / 'chance.csv', 'chance')
        out = write_report(
            tmp_path / 'sweep.csv',
            'fig2',
            tmp_path / 'fig' / 'fig2.svg',
            tmp_path / 'chance.csv',
        )
        svg = out.read_text(encoding='utf-8')
        assert '<!-- envtrack fig2 data' in svg
        assert len(_polylines(svg)) == 5


class TestLagCurves:
    def test_window_rows_ignored(self):
        frame = pd.DataFrame(
            {
                'noise': 'quiet',
                'condition': 'AV',
                'lag_or_window': ['0.0', '0.0', '15.625', '200:325'],
                'r_z': [0.1, 0.3, 0.5, 9.0],
            }
        )
        curves = lag_curves(frame, ('noise', 'condition'))
        assert curves['lag_ms'].tolist() == [0.0, 15.625]
        assert curves['mean_r_z'].tolist() == pytest.approx([0.2, 0.5])

    def test_only_windows(self):
        frame = pd.DataFrame(
            {
                'noise': 'quiet',
                'condition': 'AV',
                'lag_or_window': ['200:325'],
                'r_z': [1.0],
            }
        )
        with pytest.raises(ReportInputError):
            lag_curves(frame, ('noise', 'condition'))


class TestFromScores:
    @pytest.fixture
    def scores_csv(self, tmp_path):
        scores = [
            _score(f'{speaker}-{condition}-{lag}', speaker, condition, f'{lag}', r)
            for speaker, r in (('SP1', 0.2), ('SP2', 0.4))
            for condition in ('AV', 'A')
            for lag in LAGS[:5]
        ]
        path = tmp_path / 'scores.csv'
        write_scores(scores, path)
        return path

    def test_fig3_panel_per_speaker(self, scores_csv):
        svg = build_report(scores_csv, 'fig3')
        assert svg.count('<g class="panel">') == 2
        assert '>SP1<' in svg

    def test_fig4_from_scores(self, scores_csv):
        svg = build_report(scores_csv, 'fig4')
        assert 'SP2 AV-A: 0.000' in svg
        assert 'SP1 AV:' in svg

    def test_unknown_style(self, scores_csv):
        with pytest.raises(ReportInputError, match='Неизвестный стиль'):
            build_report(scores_csv, 'fig9')


def test_topo(tmp_path):
    weights = pd.DataFrame(
        {
            'subject_id': 'S01',
            'noise': 'quiet',
            'condition': 'AV',
            'channel': ['Fz', 'Fz', 'Cz', 'Cz'],
            'lag_ms': [203.125, 218.75, 203.125, 218.75],
            'weight': [1.0, -1.0, 0.5, 0.0],
        }
    )
    write_table(weights, tmp_path / 'weights.csv', 'weights')
    svg = build_report(tmp_path / 'weights.csv', 'topo')
    assert 'fill="#ff0000"' in svg
    assert 'fill="#0000ff"' in svg


class TestRadar:
    def test_polygon_per_speaker(self):
        radar = pd.DataFrame(
            {
                'feature': ['a', 'b', 'c'] * 2,
                'speaker_id': ['SP1'] * 3 + ['SP2'] * 3,
                'value': [0.0, 0.5, 1.0, 1.0, 0.5, 0.0],
            }
        )
        svg = radar_svg(radar)
        assert svg.count('<polygon class="speaker"') == 2

    def test_needs_three_features(self):
        radar = pd.DataFrame({'feature': ['a', 'b'], 'speaker_id': 'SP1', 'value': 1.0})
        with pytest.raises(ReportInputError):
            radar_svg(radar)


def test_data_comment_escapes_double_dash():
    comment = _data_comment(pd.DataFrame({'label': ['a--b']}))
    assert '--' not in comment
    assert 'a- -b' in comment
