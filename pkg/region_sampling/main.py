# -*- coding: utf-8 -*-
import logging
import math
from dataclasses import asdict, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed

import constants
from region_sampling import metrics
from region_sampling.core import ImageRecord
from region_sampling.experiment import (
    ConfigError,
    ExperimentConfig,
    listed,
    loadConfig,
    readYaml,
    sweepConfigs,
    tupled
)
from region_sampling.simulator import (
    CycleRecord,
    DatasetSpec,
    RunResult,
    SyntheticDataset,
    fullAnnotationReference,
    generateDataset,
    runExperiment
)
from region_sampling.tensors import readTensor, writeTensor
from utils import dictKeepKeys, dictSkipKeys, toJson

LOGGER = logging.getLogger(__name__)

DATASET_YAML = 'dataset.yaml'
SWEEP_CSV = 'sweep.csv'
REQUIRED_COLUMNS = ('strategy', 'repeat', 'cycle', 'annotated_fraction',
                    'metric')


class ReportFormatError(ValueError):
    pass


def logStart() -> datetime:
    timeStart: datetime = datetime.now(tz=timezone.utc)
    LOGGER.info(f'Start time: {timeStart.isoformat(timespec="milliseconds")}')
    return timeStart


def logEnd(timeStart: datetime) -> None:
    timeEnd: datetime = datetime.now(tz=timezone.utc)
    timeElapsed: timedelta = timeEnd - timeStart
    LOGGER.info(f'End time: {timeEnd.isoformat(timespec="milliseconds")}')
    LOGGER.info(f'Elapsed time: {timeElapsed}')


def imagePath(directory: Path, imageId: int, kind: str) -> Path:
    return directory / f'{imageId:05d}.{kind}.dten'


def writeDataset(dataset: SyntheticDataset, outDir: Path) -> None:
    """
    Write the dataset as DTEN tensors (f32 features, u16 labels) under
    `train/` and `test/`, next to a `dataset.yaml` echo of its spec.
    """
    for split, images in (('train', dataset.train), ('test', dataset.test)):
        directory = outDir / split
        directory.mkdir(parents=True, exist_ok=True)
        for image in images:
            writeTensor(imagePath(directory, image.id, 'features'),
                        image.features)
            writeTensor(imagePath(directory, image.id, 'labels'),
                        image.hiddenLabels)
    (outDir / DATASET_YAML).write_text(
        yaml.safe_dump(listed(asdict(dataset.spec)), sort_keys=False))
    LOGGER.info(f'Wrote {len(dataset.train)} train and {len(dataset.test)} '
                f'test images to "{outDir}"')


def readSplit(directory: Path, mode: str) -> List[ImageRecord]:
    images: List[ImageRecord] = []
    for labelsPath in sorted(directory.glob('*.labels.dten')):
        imageId = int(labelsPath.name.split('.')[0])
        labels = readTensor(labelsPath).astype(np.int64)
        features = readTensor(imagePath(directory, imageId, 'features'))
        images.append(ImageRecord(imageId, features, labels, mode))
    return images


def readDataset(path: Path) -> SyntheticDataset:
    """
    :raises ConfigError: when `dataset.yaml` is missing or invalid.
    :raises TensorFormatError: when a tensor file is malformed.
    """
    try:
        raw = yaml.safe_load((path / DATASET_YAML).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError([f'cannot read dataset at "{path}": {e}']) from e
    spec = datasetSpecFromDict(raw)
    dataset = SyntheticDataset(spec, readSplit(path / 'train', spec.mode),
                               readSplit(path / 'test', spec.mode))
    if len(dataset.train) != spec.n_images or \
            len(dataset.test) != spec.n_test_images:
        raise ConfigError([f'"{path}" holds {len(dataset.train)}/'
                           f'{len(dataset.test)} train/test images, '
                           f'{DATASET_YAML} promises {spec.n_images}/'
                           f'{spec.n_test_images}'])
    return dataset


def datasetSpecFromDict(raw: Any) -> DatasetSpec:
    if isinstance(raw, dict) and isinstance(raw.get('dataset'), dict):
        raw = raw['dataset']
    if not isinstance(raw, dict):
        raise ConfigError(['a dataset spec must be a table'])
    keys = list(DatasetSpec.__dataclass_fields__)
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError([f'unknown key "dataset.{k}"' for k in unknown])
    spec = DatasetSpec(**{k: tupled(v)
                          for k, v in dictKeepKeys(raw, keys).items()})
    try:
        problems = spec.validate()
    except TypeError as e:
        problems = [f'a value has the wrong type ({e})']
    if problems:
        raise ConfigError(problems)
    return spec


def generateDatasetFiles(specPath: Path, outDir: Path,
                         overrides: Sequence[str] = ()) -> SyntheticDataset:
    """
    Generate the dataset described by `specPath` (a bare dataset table or
    an experiment file with a `dataset:` table) and write it to `outDir`.
    """
    timeStart = logStart()
    spec = datasetSpecFromDict(readYaml(specPath, overrides))
    dataset = generateDataset(spec)
    writeDataset(dataset, outDir)
    logEnd(timeStart)
    return dataset


def resolveDataset(config: ExperimentConfig
                   ) -> tuple[ExperimentConfig, SyntheticDataset]:
    """
    Load or generate the dataset; a loaded dataset's spec replaces the
    configured one.  The returned configuration has been validated.
    """
    if config.dataset_path:
        dataset = readDataset(Path(config.dataset_path))
        config = replace(config, dataset=dataset.spec)
        return config.check(), dataset
    config.check()
    return config, generateDataset(config.dataset)


def runRepeats(config: ExperimentConfig, dataset: SyntheticDataset,
               threads: int = 1) -> List[RunResult]:
    """
    Run every repeat, in parallel when `threads` allows, and return the
    results in repeat order.
    """
    reference = fullAnnotationReference(config, dataset)
    outer = max(1, min(threads, config.repeats))
    inner = max(1, threads // outer)
    return Parallel(n_jobs=outer, prefer='threads')(
        delayed(runExperiment)(config, dataset, repeat, inner, reference)
        for repeat in range(config.repeats))


def recordRow(record: CycleRecord, numClasses: int) -> Dict[str, Any]:
    base = dictKeepKeys(record, ['strategy', 'repeat', 'cycle', 'metric'])
    row: Dict[str, Any] = {
        'strategy': base['strategy'],
        'repeat': base['repeat'],
        'cycle': base['cycle'],
        'n_regions': len(record.regions),
        'annotated_pixels': record.annotatedPixels,
        'annotated_fraction': record.annotatedFraction,
        'metric': base['metric']
    }
    for name, values in (('metric', record.classMetrics),
                         ('annotated', record.classCounts),
                         ('sigma', record.sigma), ('w', record.weights)):
        for c in range(numClasses):
            row[f'{name}_c{c + 1}'] = values[c] if values else np.nan
    return row


def cyclesFrame(results: Sequence[RunResult],
                numClasses: int) -> pd.DataFrame:
    return pd.DataFrame([recordRow(r, numClasses)
                         for result in results for r in result.records])


def writeCsv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=constants.CSV_FLOAT_FORMAT,
                 lineterminator='\n')


def finite(value: float) -> float | None:
    return None if value is None or math.isnan(value) else float(value)


def summarize(config: ExperimentConfig, dataset: SyntheticDataset,
              results: Sequence[RunResult]) -> Dict[str, Any]:
    numClasses = dataset.numClasses
    runs: List[Dict[str, Any]] = []
    for result in results:
        for run in result.runs:
            predicted = [r for r in run.records if r.sigma]
            alignment = metrics.confidenceAlignment(
                [r.sigma for r in predicted],
                [r.classMetrics for r in predicted])
            finiteAlignment = [a for a in alignment if not math.isnan(a)]
            final = run.records[-1] if run.records else None
            runs.append({
                'strategy': run.strategy,
                'repeat': result.repeat,
                'cycles': len(run.records),
                'final_metric': None if final is None else final.metric,
                'final_annotated_fraction':
                    None if final is None else final.annotatedFraction,
                'target_cycle': run.targetCycle,
                'alignment': [finite(a) for a in alignment],
                'mean_alignment': float(np.mean(finiteAlignment))
                if finiteAlignment else None,
                'annotation_ratios': metrics.perClassAnnotationRatio(
                    run.state, dataset.train, numClasses)
            })
    reference = results[0].reference if results else None
    return {
        'config': config.toDict(),
        'seeds': [{'repeat': r.repeat, 'seed': [config.seed, r.repeat]}
                  for r in results],
        'reference': reference,
        'target_metric': None if reference is None
        else config.target * reference,
        'runs': runs
    }


def exportPredictions(outDir: Path, dataset: SyntheticDataset,
                      results: Sequence[RunResult], threads: int = 1) -> None:
    """
    Write each run's final-model pool predictions: u16 pseudo-labels and
    f32 max-probabilities per image.
    """
    for result in results:
        for run in result.runs:
            if run.model is None:
                continue
            directory = outDir / 'predictions' / \
                run.strategy.replace('/', '+') / f'repeat{result.repeat}'
            directory.mkdir(parents=True, exist_ok=True)
            predictions = Parallel(n_jobs=threads, prefer='threads')(
                delayed(run.model.predict)(i) for i in dataset.train)
            for pred in predictions:
                writeTensor(imagePath(directory, pred.imageId, 'labels'),
                            pred.pseudoLabels)
                writeTensor(imagePath(directory, pred.imageId, 'maxprob'),
                            pred.maxProb.astype(np.float32))
            LOGGER.debug(f'Exported predictions to "{directory}"')


def writeRun(outDir: Path, config: ExperimentConfig,
             dataset: SyntheticDataset,
             results: Sequence[RunResult]) -> pd.DataFrame:
    outDir.mkdir(parents=True, exist_ok=True)
    frame = cyclesFrame(results, dataset.numClasses)
    writeCsv(frame, outDir / constants.CYCLES_CSV)
    (outDir / constants.SUMMARY_JSON).write_text(
        toJson(summarize(config, dataset, results)) + '\n')
    LOGGER.info(f'Wrote {len(frame)} cycle records to "{outDir}"')
    return frame


def runConfig(config: ExperimentConfig, outDir: Path, threads: int = 1,
              withPredictions: bool = False) -> pd.DataFrame:
    config, dataset = resolveDataset(config)
    LOGGER.debug('Experiment settings: ' + toJson(
        dictSkipKeys(config, ['dataset', 'model'])))
    LOGGER.info(f'Running {", ".join(config.strategies)} for '
                f'{config.repeats} repeat(s) of up to {config.max_cycles} '
                f'cycles on {len(dataset.train)} pool images')
    results = runRepeats(config, dataset, threads)
    frame = writeRun(outDir, config, dataset, results)
    if withPredictions:
        exportPredictions(outDir, dataset, results, threads)
    return frame


def runCommand(configPath: Path | None, outDir: Path, threads: int = 1,
               overrides: Sequence[str] = (),
               withPredictions: bool = False) -> pd.DataFrame:
    timeStart = logStart()
    frame = runConfig(loadConfig(configPath, overrides), outDir, threads,
                      withPredictions)
    logEnd(timeStart)
    return frame


def sweepCommand(configPath: Path | None, axis: str, outDir: Path,
                 threads: int = 1,
                 overrides: Sequence[str] = ()) -> pd.DataFrame:
    """
    Run the configuration once per axis value, each into its own
    subdirectory, and merge all cycle records into `sweep.csv`.
    """
    timeStart = logStart()
    variants = sweepConfigs(loadConfig(configPath, overrides), axis)
    for _, variant in variants:
        if not variant.dataset_path:
            variant.check()

    frames: List[pd.DataFrame] = []
    for value, variant in variants:
        LOGGER.info(f'Sweep {axis} = {value}')
        frame = runConfig(variant, outDir / f'{axis}={value}', threads)
        frame.insert(0, 'axis_value', value)
        frame.insert(0, 'axis', axis)
        frames.append(frame)
    merged = pd.concat(frames, ignore_index=True)
    outDir.mkdir(parents=True, exist_ok=True)
    writeCsv(merged, outDir / SWEEP_CSV)
    logEnd(timeStart)
    return merged


def readCycles(path: Path) -> pd.DataFrame:
    """
    :raises ReportFormatError: when the file cannot be parsed or lacks the
        cycle-record columns.
    """
    if path.is_dir():
        path = path / constants.CYCLES_CSV
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError,
            UnicodeDecodeError) as e:
        raise ReportFormatError(f'Cannot read cycle records from "{path}": '
                                f'{e}') from e
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ReportFormatError(f'"{path}" lacks columns: '
                                f'{", ".join(missing)}')
    return frame


def aggregateCycles(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and standard deviation over repeats of the annotated fraction and
    the test metric, per strategy and cycle (and sweep value, if present).
    """
    keys = [c for c in ('axis', 'axis_value') if c in frame.columns] + \
        ['strategy', 'cycle']
    grouped = frame.groupby(keys, sort=True)
    aggregate = grouped.agg(
        repeats=('repeat', 'nunique'),
        annotated_fraction_mean=('annotated_fraction', 'mean'),
        annotated_fraction_std=('annotated_fraction', 'std'),
        metric_mean=('metric', 'mean'),
        metric_std=('metric', 'std'))
    return aggregate.reset_index()


def reportCommand(inputs: Sequence[Path], out: Path,
                  aggregate: bool = False) -> pd.DataFrame:
    """
    Merge cycle records from run directories (or CSV files) into one
    long-format CSV: one row per strategy, repeat and cycle.
    """
    if not inputs:
        raise ReportFormatError('No inputs to report on.')
    merged = pd.concat([readCycles(p) for p in inputs], ignore_index=True)
    if aggregate:
        merged = aggregateCycles(merged)
    out.parent.mkdir(parents=True, exist_ok=True)
    writeCsv(merged, out)
    LOGGER.info(f'Wrote {len(merged)} rows from {len(inputs)} input(s) '
                f'to "{out}"')
    return merged
