# -*- coding: utf-8 -*-
import constants
from region_sampling.main import sweepCommand
from region_sampling.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Run the experiment across the values of one sweep axis.'

    def add_arguments(self, parser) -> None:
        self.addConfigArguments(parser)
        self.addThreadsArgument(parser)
        parser.add_argument('--axis', required=True,
                            choices=constants.SWEEP_AXES)

    def handle(self, *args, **options) -> None:
        self.guarded(lambda: sweepCommand(
            options['config'], options['axis'], options['out'],
            options['threads'], options['overrides']))
