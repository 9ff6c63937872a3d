# -*- coding: utf-8 -*-
import logging
from argparse import ArgumentParser
from pathlib import Path
from typing import Any, Callable

from django.core.management.base import BaseCommand, CommandError

import config
import constants
from region_sampling.experiment import ConfigError
from region_sampling.main import ReportFormatError
from region_sampling.tensors import TensorFormatError

LOGGER = logging.getLogger(__name__)

VALIDATION_ERRORS = (ConfigError, TensorFormatError, ReportFormatError)


def positiveInt(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f'{value} is not >= 1')
    return number


class ExperimentCommand(BaseCommand):
    """
    Base for the experiment commands: shared flags, and translation of
    failures into exit codes (2 for invalid input, 1 for anything else).
    """

    def addConfigArguments(self, parser: ArgumentParser) -> None:
        parser.add_argument('--config', type=Path,
                            default=Path(config.DEFAULT_CONFIG_PATH),
                            help='Experiment YAML file.')
        parser.add_argument('--out', type=Path,
                            default=Path(config.DEFAULT_OUT_DIR),
                            help='Output directory.')
        parser.add_argument('--set', action='append', default=[],
                            dest='overrides', metavar='KEY=VALUE',
                            help='Override a setting, e.g. '
                                 '"dataset.noise=0.5"; may repeat.')

    def addThreadsArgument(self, parser: ArgumentParser) -> None:
        parser.add_argument('--threads', type=positiveInt,
                            default=config.DEFAULT_THREADS,
                            help='Worker threads (default: AL_THREADS).')

    def guarded(self, action: Callable[[], Any]) -> None:
        try:
            action()
        except VALIDATION_ERRORS as e:
            LOGGER.error(str(e))
            raise CommandError(str(e),
                               returncode=constants.EXIT_VALIDATION) from e
        except Exception as e:
            LOGGER.exception(f'{self.__class__.__module__} failed: {e}')
            raise CommandError(str(e),
                               returncode=constants.EXIT_RUNTIME) from e
