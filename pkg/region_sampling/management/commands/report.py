# -*- coding: utf-8 -*-
from pathlib import Path

from region_sampling.main import reportCommand
from region_sampling.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Merge cycles.csv files from run directories into one long-format CSV,
    optionally aggregated over repeats.
    """
    help = 'Merge cycle records into one plot-ready CSV.'

    def add_arguments(self, parser) -> None:
        parser.add_argument('inputs', nargs='+', type=Path,
                            help='Run directories or cycles.csv files.')
        parser.add_argument('--out', type=Path, required=True,
                            help='Output CSV file.')
        parser.add_argument('--aggregate', action='store_true',
                            help='Mean and std over repeats per strategy '
                                 'and cycle.')

    def handle(self, *args, **options) -> None:
        self.guarded(lambda: reportCommand(
            options['inputs'], options['out'], options['aggregate']))
