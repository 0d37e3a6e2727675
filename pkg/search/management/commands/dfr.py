"""
Management command to compute the diagonal focus rate of attention map files.
Usage: python manage.py dfr compute --band 1 maps/*.txt
"""

from django.core.management.base import BaseCommand, CommandError

from search.dfr import batch_dfr, load_attention_map
from search.exceptions import SearchError


class Command(BaseCommand):
    help = 'Compute the diagonal focus rate of one or more attention map files'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)
        compute = subparsers.add_parser('compute', help='Print per-file and mean DFR')
        compute.add_argument('files', nargs='+', help='Attention map files ("O I" header, then O rows)')
        compute.add_argument('--band', type=int, required=True, help='Half-width of the diagonal band')
        compute.add_argument(
            '--row-stochastic',
            action='store_true',
            help='Reject maps whose rows do not sum to 1'
        )

    def handle(self, *args, **options):
        if options['band'] < 0:
            raise CommandError('--band must be non-negative')
        try:
            maps = [load_attention_map(path, options['row_stochastic']) for path in options['files']]
            result = batch_dfr(maps, options['band'])
        except (SearchError, OSError) as e:
            raise CommandError(str(e))
        for path, value in zip(options['files'], result.values):
            self.stdout.write(f'{path}\t{value:.6f}')
        self.stdout.write(self.style.SUCCESS(f'mean\t{result.mean:.6f}'))
