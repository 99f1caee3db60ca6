"""Команда simulate: синтетическое исследование 2×4 в формате манифестов."""

import argparse
from pathlib import Path

from envtrack.commands import resolve_seed
from envtrack.constants import CONDITION_LEVELS, EPOCH_S, NOISE_LEVELS
from envtrack.formats import load_sim_spec
from envtrack.logging import logger
from envtrack.schemas import CellSpec, SimSpec
from envtrack.sim import gen_condition_study, write_study


def spec_from_args(args: argparse.Namespace) -> SimSpec:
    """Спецификация из JSON или из быстрых флагов (одинаковое ядро во всех ячейках).

    Явный --seed перекрывает seed из файла.
    """
    if args.spec is not None:
        spec = load_sim_spec(args.spec)
        if args.seed is not None:
            spec = spec.model_copy(update={'seed': args.seed})
        return spec
    null = args.kernel == 'null'
    cells = [
        CellSpec(
            condition=condition,
            noise=noise,
            snr_db=None if null else args.snr_db,
            kernel=args.kernel,
            peak_lag_ms=args.peak_lag_ms,
        )
        for noise in NOISE_LEVELS
        for condition in CONDITION_LEVELS
    ]
    return SimSpec(
        n_trials=args.n_trials,
        epoch_s=args.epoch_s,
        channels=args.channels,
        cells=cells,
        seed=resolve_seed(args),
        n_subjects=args.n_subjects,
        n_speakers=args.n_speakers,
    )


def run_simulate(args: argparse.Namespace) -> None:
    spec = spec_from_args(args)
    trials = gen_condition_study(spec, args.threads)
    paths = write_study(trials, args.out_dir)
    for path in paths:
        logger.info('Манифест: {path}', path=path)


def register(subparsers: argparse._SubParsersAction) -> None:
    simulate = subparsers.add_parser(
        'simulate', help='Синтетические ЭЭГ и огибающие с известным ядром и SNR.'
    )
    simulate.add_argument('--spec', type=Path, help='JSON-спецификация SimSpec.')
    simulate.add_argument('--out-dir', type=Path, required=True)
    simulate.add_argument('--snr-db', type=float, default=0.0)
    simulate.add_argument(
        '--kernel', choices=('gabor', 'single_lag', 'null'), default='gabor'
    )
    simulate.add_argument('--peak-lag-ms', type=float, default=250.0)
    simulate.add_argument('--n-trials', type=int, default=10)
    simulate.add_argument('--epoch-s', type=float, default=float(EPOCH_S))
    simulate.add_argument('--channels', type=int, default=24)
    simulate.add_argument('--n-subjects', type=int, default=1)
    simulate.add_argument('--n-speakers', type=int, default=6)
    simulate.set_defaults(handler=run_simulate)
