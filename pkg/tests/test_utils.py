import time

import numpy as np
import pytest

from envtrack.config import Settings
from envtrack.utils import derive_rng, parallel_map, resolve_threads, stable_key


class TestParallelMap:
    @pytest.mark.parametrize('threads', [1, 4])
    def test_keeps_input_order(self, threads):
        def slow_square(x):
            # первые элементы завершаются последними
            time.sleep(0.001 * (10 - x))
            return x * x

        assert parallel_map(slow_square, range(10), threads) == [
            x * x for x in range(10)
        ]

    def test_empty(self):
        assert parallel_map(str, [], threads=4) == []


def test_resolve_threads(mocker):
    mocker.patch('envtrack.utils.settings.THREADS', 3)
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    assert resolve_threads(0) == 1


def test_stable_key():
    assert stable_key('S01-noise-AV-001') == stable_key('S01-noise-AV-001')
    assert stable_key('a') != stable_key('b')


class TestDeriveRng:
    def test_reproducible(self):
        first = derive_rng(5, 'S01', 'trial').standard_normal(4)
        second = derive_rng(5, 'S01', 'trial').standard_normal(4)
        np.testing.assert_array_equal(first, second)

    def test_streams_differ_by_name_and_seed(self):
        base = derive_rng(5, 'S01').standard_normal(4)
        assert not np.array_equal(base, derive_rng(5, 'S02').standard_normal(4))
        assert not np.array_equal(base, derive_rng(6, 'S01').standard_normal(4))


class TestSettings:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv('ENVTRACK_THREADS', raising=False)
        config = Settings(_env_file=None)
        assert config.THREADS == 1
        assert config.HAWK_TOKEN is None
        assert config.CHANCE_PERMUTATIONS == 100

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv('ENVTRACK_THREADS', '4')
        monkeypatch.setenv('ENVTRACK_DEFAULT_SEED', '42')
        config = Settings(_env_file=None)
        assert config.THREADS == 4
        assert config.DEFAULT_SEED == 42
