"""Experiment runner: per-seed searches, history files and aggregated summaries."""

import csv
import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path

import numpy as np
from dotenv import dotenv_values
from rest_framework.renderers import JSONRenderer

from .benchmark import SyntheticOracle, SyntheticOracleConfig, load_tabular, run_stats, summarize_runs
from .config import SWEEP_AXES
from .exceptions import ConfigurationError, SearchError, UsageError
from .search_engine import run_nao, run_random, run_re, run_semi_re, run_seminas
from .serializers import ExperimentConfigSerializer, HistoryRecordSerializer, RunResultSerializer

logger = logging.getLogger(__name__)

SUMMARY_JSON = 'summary.json'
SUMMARY_TSV = 'summary.tsv'
SWEEP_JSON = 'sweep.json'
SWEEP_TSV = 'sweep.tsv'

SUMMARY_COLUMNS = ('seed', 'status', 'best_hash', 'best_valid_accuracy', 'best_test_accuracy',
                   'regret', 'rank', 'queries')


def history_filename(seed):
    return f'history_seed{seed}.jsonl'


def _format_errors(errors, prefix=''):
    if isinstance(errors, dict):
        return '; '.join(_format_errors(value, f'{prefix}{key}: ') for key, value in errors.items())
    if isinstance(errors, list):
        return '; '.join(_format_errors(value, prefix) for value in errors)
    return f'{prefix}{errors}'


def load_config(path=None, overrides=None):
    """Resolve a flat ``key=value`` config file plus overrides into an ExperimentConfig."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f'config file not found: {path}')
        data.update({key: value for key, value in dotenv_values(path).items() if value is not None})
    data.update(overrides or {})
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError(_format_errors(serializer.errors))
    return serializer.save()


@functools.lru_cache(maxsize=4)
def build_backend(config):
    space = config.space()
    if config.backend == 'tabular':
        return load_tabular(config.benchmark_path, space)
    oracle = SyntheticOracleConfig.generate(config.oracle_seed, space, weight_scale=config.weight_scale,
                                            noise_sd=config.noise_sd, base=config.base)
    return SyntheticOracle(oracle, space)


def run_search(config, backend, seed):
    rng = np.random.default_rng(seed)
    space = config.space()
    if config.controller == 'seminas':
        return run_seminas(space, backend, config.budget(), config.controller_config(), rng)
    if config.controller == 'nao':
        return run_nao(space, backend, config.budget(), config.controller_config(), rng)
    if config.controller == 'random':
        return run_random(space, backend, config.queries, rng)
    if config.controller == 're':
        return run_re(space, backend, config.queries, config.population_size, config.sample_size, rng)
    if config.controller == 'semi_re':
        return run_semi_re(space, backend, config.queries, config.evolution(), config.controller_config(), rng)
    raise UsageError(f'unknown controller {config.controller!r}')


@dataclass
class SeedOutcome:
    seed: int
    history: object = None
    stats: object = None
    error: str = None

    @property
    def ok(self):
        return self.error is None


def _run_seed(config, seed):
    try:
        backend = build_backend(config)
        history = run_search(config, backend, seed)
    except SearchError as exc:
        logger.error(f'Seed {seed} failed: {exc}')
        return SeedOutcome(seed, getattr(exc, 'history', None), error=str(exc))
    expected = config.expected_queries()
    if history.ledger_count != expected:
        message = f'ledger count {history.ledger_count} does not match the budget of {expected}'
        logger.error(f'Seed {seed} failed: {message}')
        return SeedOutcome(seed, history, error=message)
    stats = run_stats(history, backend)
    logger.info(f'Seed {seed}: best valid {stats.best_valid_accuracy:.4f}, '
                f'test {stats.best_test_accuracy:.4f}, {stats.queries} queries')
    return SeedOutcome(seed, history, stats)


def _run_result(config, outcome):
    stats = outcome.stats
    history = outcome.history
    return {
        'final': True,
        'seed': outcome.seed,
        'controller': config.controller,
        'status': 'ok' if outcome.ok else 'failed',
        'error': outcome.error,
        'best_hash': stats.best_hash if stats else None,
        'best_arch': stats.best_arch if stats else None,
        'best_valid_accuracy': stats.best_valid_accuracy if stats else None,
        'best_test_accuracy': stats.best_test_accuracy if stats else None,
        'regret': stats.regret if stats else None,
        'rank': stats.rank if stats else None,
        'queries': history.ledger_count if history is not None else 0,
        'flagged_steps': history.flagged if history is not None else 0,
    }


def _render(data, indent=None):
    context = {'indent': indent} if indent else None
    return JSONRenderer().render(data, renderer_context=context)


def write_history(output_dir, config, outcome):
    """One JSON record per evaluation, then a final record with the run result."""
    path = Path(output_dir) / history_filename(outcome.seed)
    with path.open('wb') as fh:
        if outcome.history is not None:
            for record in outcome.history.evaluated:
                fh.write(_render(HistoryRecordSerializer(record).data) + b'\n')
        fh.write(_render(RunResultSerializer(_run_result(config, outcome)).data) + b'\n')
    return path


def build_summary(config, outcomes):
    runs = [RunResultSerializer(_run_result(config, o)).data for o in outcomes]
    completed = [o.stats for o in outcomes if o.ok]
    summary = {
        'controller': config.controller,
        'preset': config.preset,
        'seeds': [o.seed for o in outcomes],
        'completed': len(completed),
        'failed_seeds': [o.seed for o in outcomes if not o.ok],
        'expected_queries': config.expected_queries(),
        'mean_best_test_accuracy': None,
        'sd_best_test_accuracy': None,
        'mean_best_valid_accuracy': None,
        'mean_regret': None,
        'sd_regret': None,
        'mean_rank': None,
    }
    if completed:
        report = summarize_runs(completed)
        summary.update({
            'mean_best_test_accuracy': report.mean_best_test_accuracy,
            'sd_best_test_accuracy': report.sd_best_test_accuracy,
            'mean_best_valid_accuracy': report.mean_best_valid_accuracy,
            'mean_regret': report.mean_regret,
            'sd_regret': report.sd_regret,
            'mean_rank': report.mean_rank,
        })
    summary['runs'] = runs
    summary['config'] = config.as_dict()
    return summary


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_summary(output_dir, summary):
    output_dir = Path(output_dir)
    json_path = output_dir / SUMMARY_JSON
    json_path.write_bytes(_render(summary, indent=2) + b'\n')
    tsv_path = output_dir / SUMMARY_TSV
    with tsv_path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, delimiter='\t', lineterminator='\n')
        writer.writerow(SUMMARY_COLUMNS)
        for run in summary['runs']:
            writer.writerow([_cell(run[column]) for column in SUMMARY_COLUMNS])
        writer.writerow(['mean', f"{summary['completed']}/{len(summary['seeds'])}", '',
                         _cell(summary['mean_best_valid_accuracy']), _cell(summary['mean_best_test_accuracy']),
                         _cell(summary['mean_regret']), _cell(summary['mean_rank']),
                         _cell(summary['expected_queries'])])
    return json_path, tsv_path


@dataclass
class ExperimentReport:
    output_dir: Path
    summary: dict
    summary_path: Path
    history_paths: list = field(default_factory=list)

    @property
    def failed_seeds(self):
        return self.summary['failed_seeds']

    @property
    def ok(self):
        return not self.failed_seeds


def run_experiment(config, jobs=1):
    """Run every seed of ``config`` and write history files plus a summary."""
    if not config.seeds:
        raise UsageError('no seeds to run')
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f'Running {config.controller} on {len(config.seeds)} seeds with {jobs} job(s)')

    if jobs > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_seed, repeat(config), config.seeds))
    else:
        outcomes = [_run_seed(config, seed) for seed in config.seeds]

    history_paths = [write_history(output_dir, config, outcome) for outcome in outcomes]
    summary = build_summary(config, outcomes)
    summary_path, _ = write_summary(output_dir, summary)
    if summary['failed_seeds']:
        logger.warning(f"{len(summary['failed_seeds'])} seed(s) failed: {summary['failed_seeds']}")
    return ExperimentReport(output_dir, summary, summary_path, history_paths)


@dataclass(frozen=True)
class SweepRow:
    value: int
    mean_best_test_accuracy: object
    sd_best_test_accuracy: object
    mean_best_valid_accuracy: object
    completed: int
    failed_seeds: tuple


@dataclass
class SweepReport:
    axis: str
    rows: list
    reports: list
    path: Path

    @property
    def ok(self):
        return all(report.ok for report in self.reports)


def run_sweep(config, axis, values, jobs=1):
    """One experiment per value of ``axis``; every value runs the same seeds."""
    target = config.sweep_field(axis)
    values = [int(v) for v in values]
    if not values:
        raise UsageError('sweep needs at least one value')
    root = Path(config.output_dir)
    rows = []
    reports = []
    for value in values:
        sub = config.replace(**{target: value, 'output_dir': str(root / f'{axis}-{value}')}).check()
        report = run_experiment(sub, jobs)
        reports.append(report)
        s = report.summary
        rows.append(SweepRow(value, s['mean_best_test_accuracy'], s['sd_best_test_accuracy'],
                             s['mean_best_valid_accuracy'], s['completed'], tuple(s['failed_seeds'])))

    root.mkdir(parents=True, exist_ok=True)
    payload = {
        'axis': axis,
        'field': target,
        'values': values,
        'rows': [
            {'value': r.value, 'mean_best_test_accuracy': r.mean_best_test_accuracy,
             'sd_best_test_accuracy': r.sd_best_test_accuracy,
             'mean_best_valid_accuracy': r.mean_best_valid_accuracy,
             'completed': r.completed, 'failed_seeds': list(r.failed_seeds)}
            for r in rows
        ],
        'config': config.as_dict(),
    }
    path = root / SWEEP_JSON
    path.write_bytes(_render(payload, indent=2) + b'\n')
    with (root / SWEEP_TSV).open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, delimiter='\t', lineterminator='\n')
        writer.writerow((axis, 'mean_best_test_accuracy', 'sd_best_test_accuracy', 'completed'))
        for r in rows:
            writer.writerow([r.value, _cell(r.mean_best_test_accuracy), _cell(r.sd_best_test_accuracy),
                             r.completed])
    return SweepReport(axis, rows, reports, path)
