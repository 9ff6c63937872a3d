# -*- coding: utf-8 -*-
from region_sampling.main import generateDatasetFiles
from region_sampling.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Generate a synthetic dataset and write it as DTEN tensors.
    """
    help = 'Generate a synthetic dataset as DTEN tensors.'

    def add_arguments(self, parser) -> None:
        self.addConfigArguments(parser)

    def handle(self, *args, **options) -> None:
        self.guarded(lambda: generateDatasetFiles(
            options['config'], options['out'], options['overrides']))
