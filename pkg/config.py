# -*- coding: utf-8 -*-
import os
from logging import Logger, getLogger

import sys

LOGGER: Logger = getLogger(__name__)

AL_THREADS_RAW: str = os.getenv('AL_THREADS', '1')
DEFAULT_THREADS: int | None = int(AL_THREADS_RAW) \
    if AL_THREADS_RAW.strip().isdigit() else None
DEFAULT_CONFIG_PATH: str = os.getenv(
    'AL_CONFIG', os.path.join('config', 'experiment.yaml'))
DEFAULT_OUT_DIR: str = os.getenv('AL_OUT_DIR', 'results')


def checkConfig():
    envErrors = []

    if DEFAULT_THREADS is None or DEFAULT_THREADS < 1:
        envErrors.append(f'AL_THREADS ("{AL_THREADS_RAW}" is not a '
                         'positive integer)')

    if not DEFAULT_CONFIG_PATH:
        envErrors.append('AL_CONFIG (empty)')

    if not DEFAULT_OUT_DIR:
        envErrors.append('AL_OUT_DIR (empty)')

    if len(envErrors) > 0:
        LOGGER.critical('The following environment variable(s) are invalid: '
                        f'{", ".join(envErrors)}')
        sys.exit(2)


checkConfig()
