# -*- coding: utf-8 -*-
from region_sampling.main import runCommand
from region_sampling.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Django management command used to run the experiment defined
    in the configuration file.
    """
    help = 'Run an active-learning experiment; writes cycles.csv and ' \
           'summary.json.'

    def add_arguments(self, parser) -> None:
        self.addConfigArguments(parser)
        self.addThreadsArgument(parser)
        parser.add_argument('--export-predictions', action='store_true',
                            help='Also write final pool predictions as DTEN.')

    def handle(self, *args, **options) -> None:
        self.guarded(lambda: runCommand(
            options['config'], options['out'], options['threads'],
            options['overrides'], options['export_predictions']))
