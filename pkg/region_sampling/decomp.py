# -*- coding: utf-8 -*-
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
from joblib import Parallel, delayed

import constants
from region_sampling.baselines import randomFeasibleRegion
from region_sampling.core import (
    AnnotationState,
    ImageRecord,
    PredictionField,
    Region,
    Shape,
    rankByScore,
    regionIndex
)
from region_sampling.integral import WindowSearch, buildIntegral

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClassConfidence:
    """
    Per class, the fraction of pool predictions of that class whose max
    probability exceeds τ.  Classes never predicted get σ = 0, i.e. they
    count as maximally uncertain.
    """
    sigma: np.ndarray
    predictionCounts: np.ndarray
    confidentCounts: np.ndarray


@dataclass(frozen=True, eq=False)
class SamplingWeights:
    w: np.ndarray

    @property
    def numClasses(self) -> int:
        return int(self.w.shape[0])


@dataclass(frozen=True)
class ImageScore:
    imageId: int
    score: float


def confidenceCounts(pred: PredictionField, tau: float,
                     numClasses: int) -> tuple[np.ndarray, np.ndarray]:
    labels = pred.pseudoLabels.ravel() - 1
    confident = labels[pred.maxProb.ravel() > tau]
    return (np.bincount(confident, minlength=numClasses)[:numClasses],
            np.bincount(labels, minlength=numClasses)[:numClasses])


def classConfidence(predictions: Sequence[PredictionField], tau: float,
                    numClasses: int, threads: int = 1) -> ClassConfidence:
    """
    Pool-wide class confidence.  Per-image counts may be computed in
    parallel; the reduction is an exact integer sum.

    :raises ValueError: when τ is outside (0, 1) or the pool is empty.
    """
    if not 0 < tau < 1:
        raise ValueError(f'tau must lie in (0, 1), got {tau}.')
    if len(predictions) == 0:
        raise ValueError('Class confidence needs a non-empty pool.')

    partials = Parallel(n_jobs=threads, prefer='threads')(
        delayed(confidenceCounts)(p, tau, numClasses) for p in predictions)
    confident = np.sum([c for c, _ in partials], axis=0)
    total = np.sum([t for _, t in partials], axis=0)
    sigma = np.divide(confident, total, out=np.zeros(numClasses),
                      where=total > 0)
    return ClassConfidence(sigma, total, confident)


def samplingWeights(confidence: ClassConfidence,
                    mask: Sequence[float] | None = None) -> SamplingWeights:
    """
    w_c ∝ (1 − σ_c), optionally multiplied by a manual per-class mask,
    normalized to sum to 1.  Falls back to uniform weights when every
    class is fully confident (or masked out).
    """
    raw = 1.0 - confidence.sigma
    if mask is not None:
        raw = raw * np.asarray(mask, dtype=np.float64)
    total = raw.sum()
    if total <= 0:
        LOGGER.debug('Every class is fully confident; using uniform weights')
        return SamplingWeights(np.full(raw.shape[0], 1.0 / raw.shape[0]))
    return SamplingWeights(raw / total)


def defaultCap(shape: Shape, mode: str,
               fraction: float = constants.DEFAULT_CAP_FRACTION) -> float:
    if mode == constants.MODE_ROI:
        return float(constants.ROI_CAP)
    return fraction * float(np.prod(shape))


def imageScore(pred: PredictionField, weights: SamplingWeights, cap: float,
               ignore: np.ndarray | None = None) -> ImageScore:
    """
    s = Σ_c w_c · min(count_c, cap) over the image's pseudo-labels.

    :param ignore: Optional boolean mask of pixels left out of the counts
        (e.g. already annotated ones).
    """
    if cap <= 0:
        raise ValueError(f'Frequency cap must be > 0, got {cap}.')
    counts = pred.classCounts(weights.numClasses, ignore)
    return ImageScore(pred.imageId,
                      float(np.dot(weights.w, np.minimum(counts, cap))))


def selectImages(scores: Sequence[ImageScore], state: AnnotationState,
                 nImage: int) -> List[int]:
    if len(scores) == 0:
        raise ValueError('Cannot select images from an empty pool.')
    ranked = rankByScore({s.imageId: s.score for s in scores})
    return state.takeFromLoop(ranked, nImage)


def sampleClass(weights: SamplingWeights, available: Iterable[int],
                rng: np.random.Generator) -> int:
    """
    Draw a class id from `weights` renormalized over `available`; uniform
    over `available` when none of them carries weight.
    """
    classes = np.array(sorted(available), dtype=np.int64)
    if classes.size == 0:
        raise ValueError('No class available to sample from.')
    mass = weights.w[classes - 1]
    total = mass.sum()
    if total <= 0:
        return int(rng.choice(classes))
    return int(rng.choice(classes, p=mass / total))


class ClassWindows:
    """
    Best-window searches over one prediction's class indicators, keyed by
    (class, slice) and built on first use.  Every search stays in sync with
    the regions excluded so far.
    """

    def __init__(self, pred: PredictionField, side: int,
                 excluded: Sequence[Region] = ()):
        self.pred = pred
        self.side = side
        self.excluded: List[Region] = list(excluded)
        self.searches: dict[tuple[int, int | None], WindowSearch] = {}

    def search(self, classId: int, z: int | None = None) -> WindowSearch:
        key = (classId, z)
        if key not in self.searches:
            labels = self.pred.pseudoLabels if z is None \
                else self.pred.pseudoLabels[z]
            self.searches[key] = WindowSearch(
                buildIntegral(labels == classId), self.side, self.excluded, z)
        return self.searches[key]

    def exclude(self, region: Region) -> None:
        self.excluded.append(region)
        for search in self.searches.values():
            search.exclude(region)


def selectRegionForClass(image: ImageRecord, pred: PredictionField,
                         classId: int, side: int,
                         excluded: Sequence[Region],
                         rng: np.random.Generator, cycle: int = 0,
                         windows: ClassWindows | None = None
                         ) -> Region | None:
    """
    The region best representing `classId`:

    - 2-D: the window holding the most pixels predicted as the class.
    - 3-D: the same on a slice drawn uniformly among slices still holding
      an unexcluded pixel of the class (other such slices are tried in
      random order when the drawn one has no feasible window).
    - ROI: the unannotated ROI with the highest probability of the class.

    :param excluded: Regions already annotated or picked in this image.
    :param windows: Optional searches shared across calls on the same
        prediction; they must already exclude exactly `excluded`.
    :return: The region, or None when no feasible region contains the
        class.
    """
    if image.isRoi:
        if pred.fullProbs is not None:
            scores = pred.fullProbs[:, classId - 1]
        else:
            scores = np.where(pred.pseudoLabels == classId, pred.maxProb, 0.0)
        taken = {r.roiIndex for r in excluded if r.isRoi}
        free = [i for i in range(scores.shape[0]) if i not in taken]
        if not free:
            return None
        best = max(free, key=lambda i: (scores[i], -i))
        return Region.roi(image.id, best, cycle) if scores[best] > 0 else None

    windows = ClassWindows(pred, side, excluded) if windows is None \
        else windows
    if not image.isVolume:
        found = windows.search(classId).best(requirePositive=True)
        if found is None:
            return None
        (y, x), _ = found
        return Region.square(image.id, y, x, side, cycle=cycle)

    indicator = pred.pseudoLabels == classId
    sliceCounts = indicator.sum(axis=(1, 2))
    for region in excluded:
        if not region.isRoi and region.z is not None:
            sliceCounts[region.z] -= int(
                indicator[regionIndex(region, image.shape)].sum())
    for z in rng.permutation(np.flatnonzero(sliceCounts > 0)):
        z = int(z)
        found = windows.search(classId, z).best(requirePositive=True)
        if found is not None:
            (y, x), _ = found
            return Region.square(image.id, y, x, side, z, cycle)
    return None


def decompSelect(image: ImageRecord, pred: PredictionField,
                 weights: SamplingWeights, nRegion: int, side: int,
                 state: AnnotationState, rng: np.random.Generator,
                 cycle: int = 0) -> List[Region]:
    """
    Pick up to `nRegion` regions in one image, one at a time: sample a
    class among those still predicted somewhere unexcluded, take the region
    best representing it, and drop the class for this pick if it has no
    feasible region.  When no class is left a uniformly random feasible
    region is taken instead; selection ends early once the image has no
    feasible region at all.
    """
    if nRegion < 1:
        raise ValueError(f'Cannot select {nRegion} regions.')

    numClasses = weights.numClasses
    excluded = state.regionsFor(image.id)
    remaining = pred.classCounts(numClasses, state.annotatedMask(image))
    windows = None if image.isRoi else ClassWindows(pred, side, excluded)
    picks: List[Region] = []

    for _ in range(nRegion):
        available = {int(c) + 1 for c in np.flatnonzero(remaining > 0)}
        region: Region | None = None
        while available and region is None:
            classId = sampleClass(weights, available, rng)
            region = selectRegionForClass(image, pred, classId, side,
                                          excluded + picks, rng, cycle,
                                          windows)
            if region is None:
                available.discard(classId)

        if region is None:
            region = randomFeasibleRegion(image.shape, image.id, side,
                                          excluded + picks, rng, cycle)
            if region is None:
                LOGGER.debug(f'{image} has no feasible region left after '
                             f'{len(picks)} picks')
                break
            LOGGER.warning(f'No predicted class fits in {image}; took random '
                           f'{region}')

        picks.append(region)
        if windows is not None:
            windows.exclude(region)
        covered = pred.pseudoLabels[regionIndex(region, image.shape)]
        remaining -= np.bincount(covered.ravel() - 1,
                                 minlength=numClasses)[:numClasses]
    return picks
