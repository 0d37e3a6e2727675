"""
Management command to run architecture search experiments.
Usage:
    python manage.py search run --config experiments/seminas.env [--jobs 4]
    python manage.py search sweep --axis m_unlabeled --values 0,500,2000 --config experiments/seminas.env
"""

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from search.config import SWEEP_AXES
from search.exceptions import SearchError
from search.reporting import load_config, run_experiment, run_sweep


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise CommandError(f'--set expects key=value, got {pair!r}')
        overrides[key.strip()] = value.strip()
    return overrides


class Command(BaseCommand):
    help = 'Run a search experiment or a sweep over one configuration axis'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        run = subparsers.add_parser('run', help='Run every seed of one experiment')
        sweep = subparsers.add_parser('sweep', help='Run one experiment per value of an axis')
        for sub in (run, sweep):
            sub.add_argument(
                '--config',
                required=True,
                help='Flat key=value experiment file'
            )
            sub.add_argument(
                '--jobs',
                type=int,
                default=settings.SEMINAS_JOBS,
                help=f'Seeds run in parallel (default: {settings.SEMINAS_JOBS})'
            )
            sub.add_argument(
                '--output-dir',
                help='Overrides output_dir from the config file'
            )
            sub.add_argument(
                '--set',
                action='append',
                metavar='KEY=VALUE',
                help='Override one config key; may be repeated'
            )
        sweep.add_argument(
            '--axis',
            required=True,
            choices=SWEEP_AXES,
            help='Configuration key to sweep'
        )
        sweep.add_argument(
            '--values',
            required=True,
            help='Comma separated values for the axis'
        )

    def handle(self, *args, **options):
        if options['jobs'] < 1:
            raise CommandError('--jobs must be at least 1')
        overrides = _parse_overrides(options.get('set'))
        if options.get('output_dir'):
            overrides['output_dir'] = options['output_dir']

        try:
            config = load_config(options['config'], overrides)
        except SearchError as e:
            raise CommandError(f'Invalid configuration: {e}')

        self.stdout.write(self.style.WARNING('=' * 60))
        self.stdout.write(self.style.WARNING(f'SEARCH {options["action"].upper()}: {config.controller}'))
        self.stdout.write(self.style.WARNING('=' * 60))
        self.stdout.write(f'  Backend: {config.backend} {config.benchmark_path}'.rstrip())
        self.stdout.write(f'  Preset: {config.preset or "-"}')
        self.stdout.write(f'  Seeds: {len(config.seeds)} (offset {config.seed_offset})')
        self.stdout.write(f'  Query budget per seed: {config.expected_queries()}')
        self.stdout.write(f'  Output: {config.output_dir}')

        try:
            if options['action'] == 'run':
                self._run(config, options['jobs'])
            else:
                self._sweep(config, options['axis'], options['values'], options['jobs'])
        except SearchError as e:
            raise CommandError(str(e))

    def _run(self, config, jobs):
        report = run_experiment(config, jobs)
        summary = report.summary
        self.stdout.write('-' * 40)
        for run in summary['runs']:
            if run['status'] == 'ok':
                self.stdout.write(
                    f"  seed {run['seed']}: valid {run['best_valid_accuracy']:.4f} "
                    f"test {run['best_test_accuracy']:.4f} ({run['queries']} queries)"
                )
            else:
                self.stdout.write(self.style.ERROR(f"  seed {run['seed']}: {run['error']}"))
        self.stdout.write('\n' + '=' * 60)
        if summary['completed']:
            self.stdout.write(
                f"Mean best test accuracy: {summary['mean_best_test_accuracy']:.4f} "
                f"(sd {summary['sd_best_test_accuracy']:.4f})"
            )
            if summary['mean_regret'] is not None:
                self.stdout.write(f"Mean test regret: {summary['mean_regret']:.4f}")
            if summary['mean_rank'] is not None:
                self.stdout.write(f"Mean rank: {summary['mean_rank']:.1f}")
        self.stdout.write(f'Summary written to {report.summary_path}')
        self.stdout.write('=' * 60)
        if not report.ok:
            raise CommandError(f'{len(report.failed_seeds)} seed(s) failed: {report.failed_seeds}')
        self.stdout.write(self.style.SUCCESS(f"✅ {summary['completed']} seed(s) completed"))

    def _sweep(self, config, axis, values, jobs):
        try:
            values = [int(v) for v in values.split(',') if v.strip()]
        except ValueError:
            raise CommandError(f'--values must be comma separated integers, got {values!r}')
        report = run_sweep(config, axis, values, jobs)
        self.stdout.write('-' * 40)
        self.stdout.write(f'  {axis:>16}  mean best test  completed')
        for row in report.rows:
            mean = '-' if row.mean_best_test_accuracy is None else f'{row.mean_best_test_accuracy:.4f}'
            self.stdout.write(f'  {row.value:>16}  {mean:>14}  {row.completed:>9}')
        self.stdout.write(f'Sweep table written to {report.path}')
        if not report.ok:
            raise CommandError('some seeds failed; see the per-value summaries')
        self.stdout.write(self.style.SUCCESS(f'✅ Sweep over {len(report.rows)} value(s) completed'))
