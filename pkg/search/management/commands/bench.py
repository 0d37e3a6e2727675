"""
Management command to prepare and check tabular benchmark files.
Usage:
    python manage.py bench convert raw_export.csv --output nasbench.csv [--optimum 0.9432]
    python manage.py bench convert --from-synthetic --seed 0 --max-nodes 5 --output toy.csv
    python manage.py bench validate nasbench.csv
"""

from django.core.management.base import BaseCommand, CommandError

from search.benchmark import (
    SyntheticOracle,
    SyntheticOracleConfig,
    TabularBenchmark,
    dump_tabular,
    load_tabular,
    merge_rows,
    read_raw_rows,
    synthetic_table,
)
from search.exceptions import SearchError, TabularLoadError
from search.search_space import DEFAULT_OPS, SearchSpaceSpec


class Command(BaseCommand):
    help = 'Convert raw exports to the benchmark CSV format, or validate a benchmark file'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        convert = subparsers.add_parser('convert', help='Write a canonical benchmark CSV')
        convert.add_argument('input', nargs='?', help='Raw CSV export to canonicalize')
        convert.add_argument('--output', required=True, help='Benchmark CSV to write')
        convert.add_argument(
            '--optimum',
            type=float,
            help='Known best test accuracy, stored in the metadata sidecar'
        )
        convert.add_argument(
            '--from-synthetic',
            action='store_true',
            help='Enumerate a small synthetic oracle instead of reading an export'
        )
        convert.add_argument('--seed', type=int, default=0, help='Synthetic oracle seed (default: 0)')
        convert.add_argument('--noise-sd', type=float, default=0.01, help='Synthetic noise (default: 0.01)')

        validate = subparsers.add_parser('validate', help='Load a benchmark CSV and report problems')
        validate.add_argument('path', help='Benchmark CSV to check')

        for sub in (convert, validate):
            sub.add_argument('--max-nodes', type=int, default=7, help='Node budget (default: 7)')
            sub.add_argument('--max-edges', type=int, default=9, help='Edge budget (default: 9)')
            sub.add_argument(
                '--ops',
                default=','.join(DEFAULT_OPS),
                help='Comma separated operation vocabulary'
            )

    def handle(self, *args, **options):
        try:
            spec = SearchSpaceSpec(options['max_nodes'], options['max_edges'],
                                   tuple(op.strip() for op in options['ops'].split(',') if op.strip()))
            if options['action'] == 'convert':
                self._convert(spec, options)
            else:
                self._validate(spec, options['path'])
        except TabularLoadError as e:
            for line, reason in e.offenders:
                self.stderr.write(self.style.ERROR(f'  line {line}: {reason}'))
            raise CommandError(f'{e.path}: {len(e.offenders)} offending row(s)')
        except (SearchError, OSError) as e:
            raise CommandError(str(e))

    def _convert(self, spec, options):
        if options['optimum'] is not None and not 0.0 <= options['optimum'] <= 1.0:
            raise CommandError(f'--optimum {options["optimum"]} must be a fraction in [0, 1]')
        if options['from_synthetic']:
            oracle = SyntheticOracle(
                SyntheticOracleConfig.generate(options['seed'], spec, noise_sd=options['noise_sd']), spec)
            table = synthetic_table(oracle)
            table.metadata_optimum = oracle.optimum_test_accuracy()
            self.stdout.write(f'Enumerated {len(table)} cells of the {spec.max_nodes}-node space')
        else:
            if not options['input']:
                raise CommandError('convert needs an input file unless --from-synthetic is given')
            rows, offenders = read_raw_rows(options['input'])
            if offenders:
                raise TabularLoadError(options['input'], offenders)
            table = TabularBenchmark(merge_rows(rows))
            self.stdout.write(f'Read {len(rows)} rows, {len(table)} unique cells '
                              f'({len(rows) - len(table)} merged)')
        if options['optimum'] is not None:
            table.metadata_optimum = options['optimum']
        path = dump_tabular(table, options['output'])
        self.stdout.write(self.style.SUCCESS(f'✅ Wrote {len(table)} entries to {path}'))

    def _validate(self, spec, path):
        table = load_tabular(path, spec)
        self.stdout.write(self.style.WARNING('=' * 60))
        self.stdout.write(self.style.WARNING(f'BENCHMARK {path}'))
        self.stdout.write(self.style.WARNING('=' * 60))
        self.stdout.write(f'  Entries: {len(table)}')
        optimum = table.optimum_test_accuracy()
        source = 'metadata' if table.metadata_optimum is not None else 'table maximum'
        if optimum is not None:
            self.stdout.write(f'  Optimum test accuracy: {optimum:.4f} ({source})')
        self.stdout.write(self.style.SUCCESS('✅ Benchmark file is valid'))
