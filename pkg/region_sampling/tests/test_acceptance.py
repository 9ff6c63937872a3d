# -*- coding: utf-8 -*-
"""
Calibration runs on the default benchmark in `config/experiment.yaml`.
Each check runs full experiments over many paired seeds (repeats sharing a
dataset and initial labeled set), so the module is marked slow and left
out of the default selection; run it with `pytest -m slow`.
"""
import math
from dataclasses import replace
from pathlib import Path
from typing import List

import numpy as np
import pytest
from joblib import cpu_count

from region_sampling import metrics
from region_sampling.experiment import loadConfig
from region_sampling.main import runRepeats
from region_sampling.simulator import RunResult, StrategyRun, generateDataset

pytestmark = pytest.mark.slow

BENCHMARK = Path(__file__).resolve().parents[2] / 'config' / 'experiment.yaml'

SEEDS = 20
MINORITY_WINS_OVER_RAND = 18
MINORITY_WINS_OVER_UNCERT = 14
TARGET_NO_LATER_THAN_RAND = 16
TAU_RANGE_IN_STDS = 2.0
MIN_MEAN_ALIGNMENT = 0.6


def runsOf(results: List[RunResult], strategy: str) -> List[StrategyRun]:
    return [next(run for run in result.runs if run.strategy == strategy)
            for result in results]


def minorityPixels(run: StrategyRun, minority: int) -> int:
    return run.records[-1].classCounts[minority - 1]


def targetCycle(run: StrategyRun) -> float:
    return math.inf if run.targetCycle is None else run.targetCycle


@pytest.fixture(scope='module')
def benchmark():
    config = replace(loadConfig(BENCHMARK),
                     strategies=('rand', 'uncert', 'decomp'),
                     repeats=SEEDS, stop_at_target=False)
    dataset = generateDataset(config.dataset)
    return config, dataset, runRepeats(config, dataset, cpu_count())


@pytest.fixture(scope='module')
def minority(benchmark) -> int:
    config, _, _ = benchmark
    return int(np.argmin(config.dataset.frequencies)) + 1


class TestDefaultBenchmark:

    def test_reference_is_a_ceiling(self, benchmark):
        config, _, results = benchmark
        reference = results[0].reference
        for strategy in config.strategies:
            finals = [run.records[-1].metric
                      for run in runsOf(results, strategy)]
            assert np.mean(finals) <= reference
        # The shared random cycle must not already reach the target.
        first = [run.records[0].metric for run in runsOf(results, 'rand')]
        assert np.mean(first) < config.target * reference

    def test_minority_class_gets_predicted(self, benchmark, minority):
        _, _, results = benchmark
        predicted = sum(run.records[-1].classMetrics[minority - 1] > 0
                        for run in runsOf(results, 'decomp'))
        assert predicted >= SEEDS // 2

    def test_minority_coverage(self, benchmark, minority):
        config, _, results = benchmark
        decomp = runsOf(results, 'decomp')
        for run in decomp:
            assert len(run.records) == config.max_cycles
        overRand = sum(
            minorityPixels(d, minority) > minorityPixels(r, minority)
            for d, r in zip(decomp, runsOf(results, 'rand')))
        overUncert = sum(
            minorityPixels(d, minority) > minorityPixels(u, minority)
            for d, u in zip(decomp, runsOf(results, 'uncert')))
        assert overRand >= MINORITY_WINS_OVER_RAND
        assert overUncert >= MINORITY_WINS_OVER_UNCERT

    def test_target_efficiency(self, benchmark):
        config, _, results = benchmark
        decomp, rand = runsOf(results, 'decomp'), runsOf(results, 'rand')
        noLater = sum(targetCycle(d) <= targetCycle(r)
                      for d, r in zip(decomp, rand))
        assert noLater >= TARGET_NO_LATER_THAN_RAND

        half = config.max_cycles // 2 - 1
        means = {s: np.mean([run.records[half].metric
                             for run in runsOf(results, s)])
                 for s in config.strategies}
        assert means['decomp'] >= means['rand']
        assert means['decomp'] >= means['uncert']

    def test_tau_insensitivity(self, benchmark):
        config, dataset, results = benchmark
        finals = {config.tau: [run.records[-1].metric
                               for run in runsOf(results, 'decomp')]}
        for tau in (0.3, 0.5):
            variant = replace(config, tau=tau, strategies=('decomp',))
            finals[tau] = [result.runs[0].records[-1].metric for result in
                           runRepeats(variant, dataset, cpu_count())]
        means = [np.mean(v) for v in finals.values()]
        spread = np.std(finals[config.tau], ddof=1)
        assert max(means) - min(means) <= TAU_RANGE_IN_STDS * spread

    def test_confidence_tracks_class_metrics(self, benchmark):
        _, _, results = benchmark
        perRun = []
        for run in runsOf(results, 'decomp'):
            predicted = [r for r in run.records if r.sigma]
            alignment = metrics.confidenceAlignment(
                [r.sigma for r in predicted],
                [r.classMetrics for r in predicted])
            perRun.append(np.nanmean(alignment))
        assert np.nanmean(perRun) >= MIN_MEAN_ALIGNMENT
