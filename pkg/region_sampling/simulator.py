# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
import sys
from typing import TYPE_CHECKING, Dict, List, Mapping, Sequence

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial import cKDTree
from scipy.special import expit, logsumexp

import constants
from region_sampling import metrics
from region_sampling.core import (
    AnnotationState,
    ImageRecord,
    ModelHandle,
    Oracle,
    PredictionField,
    Predictor,
    Region,
    annotate,
    expectedRank
)
from region_sampling.decomp import classConfidence, samplingWeights
from region_sampling.strategies import (
    SelectionContext,
    Strategy,
    eligibleImageIds,
    initialSelection,
    parseStrategy
)

if TYPE_CHECKING:
    from region_sampling.experiment import ExperimentConfig

LOGGER = logging.getLogger(__name__)


class EmptyAnnotationError(ValueError):
    pass


@dataclass
class DatasetSpec:
    """
    Synthetic dataset description.  `shape` is (H, W), (D, H, W) or (M,)
    depending on `mode`; labels come from a Voronoi partition with
    `n_cells` cells whose classes are drawn by `frequencies`.
    """
    mode: str = constants.MODE_SEGMENTATION_2D
    n_images: int = 64
    n_test_images: int = 16
    shape: tuple[int, ...] = (128, 128)
    n_classes: int = 5
    frequencies: tuple[float, ...] = (0.70, 0.15, 0.10, 0.04, 0.01)
    n_features: int = 6
    noise: float = 0.7
    mean_scale: float = 2.0
    n_cells: int = 256
    drift: float = 0.5
    seed: int = 0
    class_means: tuple[tuple[float, ...], ...] | None = None

    def validate(self) -> List[str]:
        errors: List[str] = []
        if self.mode not in constants.MODES:
            errors.append(f'dataset.mode must be one of {constants.MODES}')
        elif len(self.shape) != expectedRank(self.mode):
            errors.append(f'dataset.shape {list(self.shape)} does not fit '
                          f'mode {self.mode}')
        if any(s < 1 for s in self.shape):
            errors.append('dataset.shape entries must be >= 1')
        if self.n_images < 1 or self.n_test_images < 1:
            errors.append('dataset.n_images and dataset.n_test_images must '
                          'be >= 1')
        if self.n_classes < 2:
            errors.append('dataset.n_classes must be >= 2')
        if len(self.frequencies) != self.n_classes:
            errors.append(f'dataset.frequencies needs {self.n_classes} '
                          'entries')
        if any(f <= 0 for f in self.frequencies) or \
                abs(sum(self.frequencies) - 1.0) > 1e-9:
            errors.append('dataset.frequencies must be > 0 and sum to 1')
        if self.n_features < 1:
            errors.append('dataset.n_features must be >= 1')
        if self.noise < 0 or self.mean_scale < 0 or self.drift < 0:
            errors.append('dataset.noise, mean_scale and drift must be >= 0')
        if self.n_cells < 1:
            errors.append('dataset.n_cells must be >= 1')
        if self.class_means is not None and (
                len(self.class_means) != self.n_classes or any(
                    len(m) != self.n_features for m in self.class_means)):
            errors.append('dataset.class_means must be n_classes rows of '
                          'n_features values')
        return errors


@dataclass
class ModelSpec:
    activation: str = constants.ACTIVATION_SOFTMAX
    # Multiplier of the largest step that keeps full-batch descent monotone.
    learning_rate: float = 1.0
    epochs: int = 200

    def validate(self) -> List[str]:
        errors: List[str] = []
        if self.activation not in constants.ACTIVATIONS:
            errors.append(f'model.activation must be one of '
                          f'{constants.ACTIVATIONS}')
        if not 0 < self.learning_rate <= 1:
            errors.append('model.learning_rate must lie in (0, 1]')
        if self.epochs < 1:
            errors.append('model.epochs must be >= 1')
        return errors


@dataclass(eq=False)
class SyntheticDataset:
    spec: DatasetSpec
    train: List[ImageRecord]
    test: List[ImageRecord]

    @property
    def numClasses(self) -> int:
        return self.spec.n_classes

    @property
    def trainById(self) -> Dict[int, ImageRecord]:
        return {i.id: i for i in self.train}


def voronoiLabels(height: int, width: int, seeds: np.ndarray,
                  classes: np.ndarray) -> np.ndarray:
    grid = np.indices((height, width)).reshape(2, -1).T + 0.5
    _, nearest = cKDTree(seeds).query(grid)
    return classes[nearest].reshape(height, width)


def generateLabels(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    probabilities = np.asarray(spec.frequencies, dtype=np.float64)
    probabilities = probabilities / probabilities.sum()

    if spec.mode == constants.MODE_ROI:
        return rng.choice(spec.n_classes, size=spec.shape[0],
                          p=probabilities) + 1

    height, width = spec.shape[-2:]
    seeds = rng.uniform((0.0, 0.0), (height, width), size=(spec.n_cells, 2))
    classes = rng.choice(spec.n_classes, size=spec.n_cells,
                         p=probabilities) + 1
    if spec.mode == constants.MODE_SEGMENTATION_2D:
        return voronoiLabels(height, width, seeds, classes)

    # Volumes: cell seeds drift slowly from slice to slice.
    depth = spec.shape[0]
    steps = rng.normal(0.0, spec.drift, size=(depth, spec.n_cells, 2))
    steps[0] = 0.0
    positions = seeds + np.cumsum(steps, axis=0)
    return np.stack([voronoiLabels(height, width, p, classes)
                     for p in positions])


def classMeans(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Per-class feature means: `class_means` when given, otherwise class c
    sits at `mean_scale` on feature axis c, so every pair of classes is
    equally far apart.  Classes beyond the feature count get Gaussian means
    of scale `mean_scale`.
    """
    if spec.class_means is not None:
        return np.asarray(spec.class_means, dtype=np.float64)
    means = np.zeros((spec.n_classes, spec.n_features))
    axes = min(spec.n_classes, spec.n_features)
    means[np.arange(axes), np.arange(axes)] = spec.mean_scale
    if spec.n_classes > spec.n_features:
        means[axes:] = rng.normal(0.0, spec.mean_scale,
                                  size=(spec.n_classes - axes,
                                        spec.n_features))
    return means


def generateDataset(spec: DatasetSpec) -> SyntheticDataset:
    """
    Build train pool and fully labeled test set, deterministically from
    `spec.seed`.  Features are the class mean plus Gaussian noise, stored
    as float32.
    """
    rng = np.random.default_rng(spec.seed)
    means = classMeans(spec, rng)

    images: List[ImageRecord] = []
    for imageId in range(spec.n_images + spec.n_test_images):
        labels = generateLabels(spec, rng).astype(np.int64)
        noise = rng.standard_normal(labels.shape + (spec.n_features,))
        features = (means[labels - 1] + spec.noise * noise) \
            .astype(np.float32)
        images.append(ImageRecord(imageId, features, labels, spec.mode))

    LOGGER.debug(f'Generated {len(images)} {spec.mode} images of shape '
                 f'{spec.shape}')
    return SyntheticDataset(spec, images[:spec.n_images],
                            images[spec.n_images:])


class ToyModel(object):
    """
    Linear classifier over standardized pixel (or ROI) features, fit by
    full-batch gradient descent from zero weights.  Softmax models minimize
    multinomial cross-entropy; sigmoid models minimize one-vs-rest binary
    cross-entropy.  The step is `learningRate / L` with L a bound on the
    loss curvature, so the loss never increases from one epoch to the next.
    """

    def __init__(self, nFeatures: int, nClasses: int,
                 activation: str = constants.ACTIVATION_SOFTMAX,
                 learningRate: float = 1.0, epochs: int = 200):
        self.nFeatures = nFeatures
        self.nClasses = nClasses
        self.activation = activation
        self.learningRate = learningRate
        self.epochs = epochs
        self.weights = np.zeros((nFeatures + 1, nClasses))
        self.offset = np.zeros(nFeatures)
        self.scale = np.ones(nFeatures)
        self.lossHistory: List[float] = []

    @classmethod
    def fromSpec(cls, spec: ModelSpec, nFeatures: int,
                 nClasses: int) -> Self:
        return cls(nFeatures, nClasses, spec.activation, spec.learning_rate,
                   spec.epochs)

    def design(self, features: np.ndarray) -> np.ndarray:
        standardized = (np.asarray(features, dtype=np.float64)
                        - self.offset) / self.scale
        return np.hstack([standardized, np.ones((standardized.shape[0], 1))])

    def lossAndGradient(self, weights: np.ndarray, design: np.ndarray,
                        labels: np.ndarray) -> tuple[float, np.ndarray]:
        n = design.shape[0]
        scores = design @ weights
        rows = np.arange(n)
        if self.activation == constants.ACTIVATION_SOFTMAX:
            logProbs = scores - logsumexp(scores, axis=1, keepdims=True)
            loss = -float(logProbs[rows, labels - 1].mean())
            residual = np.exp(logProbs)
            residual[rows, labels - 1] -= 1.0
        else:
            targets = np.zeros_like(scores)
            targets[rows, labels - 1] = 1.0
            loss = float((np.logaddexp(0.0, scores)
                          - targets * scores).sum(axis=1).mean())
            residual = expit(scores) - targets
        return loss, design.T @ residual / n

    def curvatureBound(self, design: np.ndarray) -> float:
        factor = 0.5 if self.activation == constants.ACTIVATION_SOFTMAX \
            else 0.25
        gram = design.T @ design / design.shape[0]
        return factor * float(np.linalg.eigvalsh(gram)[-1])

    def fit(self, features: np.ndarray, labels: np.ndarray) -> Self:
        """
        :raises EmptyAnnotationError: when there is nothing to learn from.
        """
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            raise EmptyAnnotationError('Cannot train without labels.')
        features = np.asarray(features, dtype=np.float64)
        self.offset = features.mean(axis=0)
        scale = features.std(axis=0)
        self.scale = np.where(scale > 0, scale, 1.0)
        design = self.design(features)

        step = self.learningRate / self.curvatureBound(design)
        weights = np.zeros((self.nFeatures + 1, self.nClasses))
        self.lossHistory = []
        for _ in range(self.epochs):
            loss, gradient = self.lossAndGradient(weights, design, labels)
            self.lossHistory.append(loss)
            weights = weights - step * gradient
        self.lossHistory.append(
            self.lossAndGradient(weights, design, labels)[0])
        self.weights = weights
        return self

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        scores = self.design(features) @ self.weights
        if self.activation == constants.ACTIVATION_SOFTMAX:
            return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
        return expit(scores)

    def predict(self, image: ImageRecord) -> PredictionField:
        flat = image.features.reshape(-1, image.nFeatures)
        probs = self.probabilities(flat).reshape(image.shape
                                                 + (self.nClasses,))
        return PredictionField.fromProbabilities(image.id, probs,
                                                 self.activation)


def train(spec: ModelSpec, state: AnnotationState,
          images: Mapping[int, ImageRecord], numClasses: int) -> ToyModel:
    """
    Fit a fresh model on the revealed (feature, label) pairs only.

    :raises EmptyAnnotationError: when nothing has been annotated.
    """
    features, labels = state.labeledData(images)
    if labels.size == 0:
        raise EmptyAnnotationError('The annotation state is empty.')
    nFeatures = next(iter(images.values())).nFeatures
    return ToyModel.fromSpec(spec, nFeatures, numClasses) \
        .fit(features, labels)


def checkedPrediction(model: Predictor, image: ImageRecord) -> PredictionField:
    pred = model.predict(image)
    pred.validate()
    return pred


def predictAll(model: Predictor, images: Sequence[ImageRecord],
               threads: int = 1) -> Dict[int, PredictionField]:
    """
    Predict every image, checking each prediction's shape and probability
    invariants.

    :raises ValueError: when a prediction breaks them.
    """
    predictions = Parallel(n_jobs=threads, prefer='threads')(
        delayed(checkedPrediction)(model, i) for i in images)
    return {p.imageId: p for p in predictions}


def evaluate(model: ToyModel, images: Sequence[ImageRecord], mode: str,
             numClasses: int) -> tuple[float, metrics.ClassReport]:
    """
    Test metric for the mode (mIoU, class-averaged Dice or weighted F1)
    over all test images pooled, plus the per-class report.
    """
    pred = np.concatenate([model.predict(i).pseudoLabels.ravel()
                           for i in images])
    true = np.concatenate([i.hiddenLabels.ravel() for i in images])
    if mode == constants.MODE_ROI:
        return metrics.weightedF1(pred, true, numClasses), \
            metrics.f1Report(pred, true, numClasses)
    if mode == constants.MODE_SEGMENTATION_3D:
        report = metrics.dice(pred, true, numClasses)
    else:
        report = metrics.iou(pred, true, numClasses)
    return report.macro, report


def fullAnnotationReference(config: ExperimentConfig,
                            dataset: SyntheticDataset) -> float:
    """
    Test metric of a model trained on the fully revealed pool; the
    denominator of the target fraction.
    """
    features = np.concatenate([i.features.reshape(-1, i.nFeatures)
                               for i in dataset.train])
    labels = np.concatenate([i.hiddenLabels.ravel() for i in dataset.train])
    model = ToyModel.fromSpec(config.model, features.shape[1],
                              dataset.numClasses).fit(features, labels)
    reference, _ = evaluate(model, dataset.test, dataset.spec.mode,
                            dataset.numClasses)
    LOGGER.info(f'Full-annotation reference metric: {reference:.4f}')
    return reference


@dataclass
class CycleRecord:
    strategy: str
    repeat: int
    cycle: int
    regions: tuple[Region, ...]
    annotatedPixels: int
    annotatedFraction: float
    metric: float
    classMetrics: tuple[float, ...]
    classCounts: tuple[int, ...]
    # Empty for the random initial cycle, which uses no predictions.
    sigma: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    wallTime: float = field(default=0.0, compare=False)


@dataclass(eq=False)
class StrategyRun:
    strategy: str
    records: List[CycleRecord]
    state: AnnotationState
    model: ToyModel | None
    targetCycle: int | None


@dataclass(eq=False)
class RunResult:
    repeat: int
    reference: float
    runs: List[StrategyRun]

    @property
    def records(self) -> List[CycleRecord]:
        return [r for run in self.runs for r in run.records]


def resolveCapMode(config: ExperimentConfig) -> str:
    if config.cap_mode in constants.CAP_MODES:
        return config.cap_mode
    return constants.CAP_MODE_ROI if config.dataset.mode == constants.MODE_ROI \
        else constants.CAP_MODE_FRACTION


def runStrategy(config: ExperimentConfig, dataset: SyntheticDataset,
                strategy: Strategy, repeat: int, reference: float,
                threads: int = 1) -> StrategyRun:
    """
    One full active-learning run: a random initial cycle, then cycles of
    predict → select → annotate → retrain → evaluate, until `max_cycles`,
    the target fraction of `reference` (when `stop_at_target`), or an
    exhausted pool.
    """
    images = dataset.trainById
    numClasses = dataset.numClasses
    oracle = Oracle(dataset.train)
    state = AnnotationState()
    totalPixels = sum(i.size for i in dataset.train)
    capMode = resolveCapMode(config)
    records: List[CycleRecord] = []
    model: ToyModel | None = None
    targetCycle: int | None = None

    for cycle in range(1, config.max_cycles + 1):
        started = time.perf_counter()
        pool = eligibleImageIds(dataset.train, state, config.region_size)
        if not pool:
            LOGGER.warning(f'{strategy.name}: no feasible region left in the '
                           f'pool at cycle {cycle}; stopping.')
            break

        predictions: Dict[int, PredictionField] = {}
        sigma: tuple[float, ...] = ()
        weights = None
        if model is not None:
            handle = ModelHandle(cycle - 1, model)
            predictions = predictAll(handle.predictor,
                                     [images[i] for i in pool], threads)
            confidence = classConfidence(
                [predictions[i] for i in pool], config.tau, numClasses,
                threads)
            weights = samplingWeights(confidence, config.class_weight_mask)
            sigma = tuple(float(s) for s in confidence.sigma)

        ctx = SelectionContext(
            images=images, predictions=predictions, weights=weights,
            state=state, pool=pool, side=config.region_size,
            nImage=min(config.n_image, len(pool)), nRegion=config.n_region,
            capMode=capMode, capFraction=config.cap_fraction,
            diversFactor=config.divers_factor,
            scoreAnnotatedPixels=config.score_annotated_pixels,
            seed=config.seed, repeat=repeat, cycle=cycle, threads=threads)
        if model is None:
            imageIds, selection = initialSelection(ctx)
        else:
            imageIds = strategy.imageSelector(ctx)
            selection = strategy.regionSelector(ctx, imageIds)

        selected = tuple(r for i in imageIds for r in selection.get(i, []))
        for region in selected:
            annotate(state, region, oracle)
        state.audit(images)

        model = train(config.model, state, images, numClasses)
        metric, report = evaluate(model, dataset.test, dataset.spec.mode,
                                  numClasses)
        record = CycleRecord(
            strategy=strategy.name, repeat=repeat, cycle=cycle,
            regions=selected, annotatedPixels=state.revealedPixelCount,
            annotatedFraction=state.revealedPixelCount / totalPixels,
            metric=metric,
            classMetrics=tuple(float(v) for v in report.values),
            classCounts=tuple(int(c) for c in state.classCounts(numClasses)),
            sigma=sigma,
            weights=() if weights is None
            else tuple(float(w) for w in weights.w),
            wallTime=time.perf_counter() - started)
        records.append(record)
        LOGGER.info(f'{strategy.name} repeat {repeat} cycle {cycle}: '
                    f'{len(selected)} regions in {len(imageIds)} images, '
                    f'annotated {record.annotatedFraction:.4%}, '
                    f'metric {metric:.4f}')

        if targetCycle is None and \
                metric >= config.target * reference:
            targetCycle = cycle
            LOGGER.info(f'{strategy.name} repeat {repeat} reached '
                        f'{config.target:.0%} of the reference at cycle '
                        f'{cycle}')
            if config.stop_at_target:
                break

    return StrategyRun(strategy.name, records, state, model, targetCycle)


def runExperiment(config: ExperimentConfig,
                  dataset: SyntheticDataset | None = None, repeat: int = 0,
                  threads: int = 1, reference: float | None = None
                  ) -> RunResult:
    """
    Run every configured strategy for one repeat on the same dataset and
    the same random initial labeled set.
    """
    if dataset is None:
        dataset = generateDataset(config.dataset)
    if reference is None:
        reference = fullAnnotationReference(config, dataset)
    runs = [runStrategy(config, dataset, parseStrategy(name), repeat,
                        reference, threads)
            for name in config.strategies]
    return RunResult(repeat, reference, runs)
