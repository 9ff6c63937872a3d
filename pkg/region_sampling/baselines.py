# -*- coding: utf-8 -*-
import logging
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import entr
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import pairwise_distances

import constants
from region_sampling.core import (
    AnnotationState,
    PredictionField,
    Region,
    Shape,
    rankByScore,
    regionIndex,
    regionsOverlap
)
from region_sampling.integral import (
    buildIntegral,
    feasibleOrigins,
    maskedArgmax,
    suppressOrigins,
    tieTolerance,
    windowMeanMap
)

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Candidate:
    """
    A pooled candidate region with its window uncertainty, its 2C-long
    region feature and its 2C·C-long gradient embedding.
    """
    region: Region
    uncertainty: float
    feature: np.ndarray
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float


def entropyMap(pred: PredictionField) -> np.ndarray:
    """
    Per-pixel (or per-ROI) entropy in nats, with 0·log 0 taken as 0.

    :raises ValueError: when the prediction carries no class probabilities.
    """
    if pred.fullProbs is None:
        raise ValueError(f'Prediction ({pred.imageId}) has no class '
                         'probabilities; entropy needs them.')
    return entr(pred.fullProbs).sum(axis=-1)


def leastConfidenceMap(pred: PredictionField) -> np.ndarray:
    return 1.0 - pred.maxProb


def uncertaintyMap(pred: PredictionField) -> np.ndarray:
    # Entropy for softmax models, least confidence for sigmoid models.
    if pred.activation == constants.ACTIVATION_SOFTMAX \
            and pred.fullProbs is not None:
        return entropyMap(pred)
    return leastConfidenceMap(pred)


def meanUncertainty(pred: PredictionField) -> float:
    umap = uncertaintyMap(pred)
    return float(umap.mean()) if umap.size else 0.0


def uncertSelectImages(predictions: Sequence[PredictionField],
                       state: AnnotationState, nImage: int) -> List[int]:
    scores = {p.imageId: meanUncertainty(p) for p in predictions}
    return state.takeFromLoop(rankByScore(scores), nImage)


def nmsWindows(umap: np.ndarray, side: int, n: int,
               excluded: Sequence[Region], imageId: int, cycle: int = 0
               ) -> List[tuple[Region, float]]:
    """
    Greedy non-maximum suppression over stride-1 windows: repeatedly keep
    the feasible window with the highest mean uncertainty, then suppress
    every origin overlapping it.  ROI maps (1-D) rank unannotated ROIs.
    """
    umap = np.asarray(umap, dtype=np.float64)
    if umap.ndim == 1:
        taken = {r.roiIndex for r in excluded if r.isRoi}
        order = sorted((i for i in range(umap.shape[0]) if i not in taken),
                       key=lambda i: (-umap[i], i))
        return [(Region.roi(imageId, i, cycle), float(umap[i]))
                for i in order[:n]]

    isVolume = umap.ndim == 3
    planes = umap if isVolume else umap[np.newaxis]
    height, width = planes.shape[-2:]
    tables = [buildIntegral(p) for p in planes]
    means = np.stack([windowMeanMap(t, side) for t in tables])
    tolerance = max(tieTolerance(t) for t in tables) / float(side * side)
    feasible = np.stack([
        feasibleOrigins(height, width, side, excluded,
                        z if isVolume else None)
        for z in range(planes.shape[0])])

    picks: List[tuple[Region, float]] = []
    while len(picks) < n:
        best = maskedArgmax(means, feasible, tolerance)
        if best is None:
            break
        (z, y, x), value = best
        region = Region.square(imageId, y, x, side,
                               z if isVolume else None, cycle)
        picks.append((region, float(value)))
        suppressOrigins(feasible[z], region, side)
    return picks


def uncertSelectRegions(umap: np.ndarray, side: int, nRegion: int,
                        excluded: Sequence[Region], imageId: int,
                        cycle: int = 0) -> List[Region]:
    return [r for r, _ in
            nmsWindows(umap, side, nRegion, excluded, imageId, cycle)]


def regionFeature(pred: PredictionField, region: Region) -> np.ndarray:
    """
    Mean class probabilities over the region followed by its normalized
    pseudo-label histogram.
    """
    if pred.fullProbs is None:
        raise ValueError(f'Prediction ({pred.imageId}) has no class '
                         'probabilities; region features need them.')
    numClasses = pred.fullProbs.shape[-1]
    index = regionIndex(region, pred.shape)
    probs = pred.fullProbs[index].reshape(-1, numClasses)
    labels = pred.pseudoLabels[index].ravel()
    histogram = np.bincount(labels - 1, minlength=numClasses)[:numClasses]
    return np.concatenate([probs.mean(axis=0),
                           histogram / float(labels.size)])


def gradientEmbedding(pred: PredictionField, region: Region) -> np.ndarray:
    """
    Region feature scaled by the per-class mean absolute discrepancy
    between predicted probabilities and one-hot pseudo-labels, flattened to
    length 2C·C.  Zero only when every prediction in the region is one-hot.
    """
    feature = regionFeature(pred, region)
    numClasses = pred.fullProbs.shape[-1]
    index = regionIndex(region, pred.shape)
    probs = pred.fullProbs[index].reshape(-1, numClasses)
    oneHot = np.eye(numClasses)[pred.pseudoLabels[index].ravel() - 1]
    discrepancy = np.abs(probs - oneHot).mean(axis=0)
    return np.outer(discrepancy, feature).ravel()


def imageCandidates(pred: PredictionField, side: int, n: int,
                    excluded: Sequence[Region],
                    cycle: int = 0) -> List[Candidate]:
    windows = nmsWindows(uncertaintyMap(pred), side, n, excluded,
                         pred.imageId, cycle)
    return [Candidate(region, value, regionFeature(pred, region),
                      gradientEmbedding(pred, region))
            for region, value in windows]


def diversCandidatePool(predictions: Sequence[PredictionField], side: int,
                        factor: int, nRegion: int, state: AnnotationState,
                        cycle: int = 0, threads: int = 1) -> List[Candidate]:
    """
    Per image, the `factor`·`nRegion` most uncertain non-overlapping
    windows, pooled across images in input order.
    """
    if factor < 1:
        raise ValueError(f'Candidate pool factor must be >= 1, got {factor}.')
    perImage = Parallel(n_jobs=threads, prefer='threads')(
        delayed(imageCandidates)(pred, side, factor * nRegion,
                                 state.regionsFor(pred.imageId), cycle)
        for pred in predictions)
    pool = [c for candidates in perImage for c in candidates]
    LOGGER.debug(f'Candidate pool: {len(pool)} regions from '
                 f'{len(predictions)} images')
    return pool


def kmeans(features: np.ndarray, k: int,
           rng: np.random.Generator) -> KMeansResult:
    """
    Lloyd k-means with k-means++ seeding, at most 100 iterations, seeded
    from `rng` so the result is a function of the generator state.

    :raises ValueError: when k is not in [1, len(features)].
    """
    features = np.asarray(features, dtype=np.float64)
    if k < 1 or k > features.shape[0]:
        raise ValueError(f'Cannot form {k} clusters from '
                         f'{features.shape[0]} points.')
    model = KMeans(n_clusters=k, init='k-means++', n_init=1,
                   max_iter=constants.KMEANS_MAX_ITER,
                   tol=constants.KMEANS_TOLERANCE,
                   random_state=int(rng.integers(2 ** 31 - 1)),
                   algorithm='lloyd')
    with warnings.catch_warnings():
        # Duplicate points can leave fewer distinct clusters than k.
        warnings.simplefilter('ignore', ConvergenceWarning)
        model.fit(features)
    return KMeansResult(model.labels_, model.cluster_centers_,
                        float(model.inertia_))


def sortedCandidates(pool: Sequence[Candidate]) -> List[Candidate]:
    return sorted(pool, key=lambda c: c.region.sortKey)


def diversClusterSelect(pool: Sequence[Candidate], budget: int,
                        rng: np.random.Generator) -> List[Region]:
    """
    Cluster candidate features into `budget` groups and keep the most
    uncertain candidate of each non-empty cluster.
    """
    pool = sortedCandidates(pool)
    if budget >= len(pool):
        return [c.region for c in pool]
    result = kmeans(np.stack([c.feature for c in pool]), budget, rng)
    picks: List[Region] = []
    for cluster in range(budget):
        members = [c for c, label in zip(pool, result.labels)
                   if label == cluster]
        if not members:
            continue
        best = min(members,
                   key=lambda c: (-c.uncertainty, c.region.sortKey))
        picks.append(best.region)
    return picks


def diversCoresetSelect(pool: Sequence[Candidate],
                        budget: int) -> List[Region]:
    """
    Greedy k-center over candidate features, seeded with the most
    uncertain candidate.
    """
    pool = sortedCandidates(pool)
    if budget >= len(pool):
        return [c.region for c in pool]
    distances = pairwise_distances(np.stack([c.feature for c in pool]),
                                   metric='euclidean')
    seed = min(range(len(pool)), key=lambda i: (-pool[i].uncertainty, i))
    selected = [seed]
    minDistances = distances[seed].copy()
    minDistances[selected] = -np.inf
    while len(selected) < budget:
        farthest = int(np.argmax(minDistances))
        selected.append(farthest)
        minDistances = np.minimum(minDistances, distances[farthest])
        minDistances[selected] = -np.inf
    return [pool[i].region for i in selected]


def badgeSelect(pool: Sequence[Candidate], budget: int,
                rng: np.random.Generator) -> List[Region]:
    """
    k-means++ sampling over gradient embeddings: the first pick is uniform
    among the largest-norm embeddings, later picks are drawn with
    probability proportional to the squared distance to the nearest pick.
    All-zero embeddings reduce this to uniform sampling.
    """
    pool = sortedCandidates(pool)
    if budget >= len(pool):
        return [c.region for c in pool]
    embeddings = np.stack([c.embedding for c in pool])
    norms = np.linalg.norm(embeddings, axis=1)
    first = int(rng.choice(np.flatnonzero(norms == norms.max())))
    chosen = [first]
    squared = ((embeddings - embeddings[first]) ** 2).sum(axis=1)
    while len(chosen) < budget:
        weights = squared.copy()
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0:
            nextPick = int(rng.choice(len(pool), p=weights / total))
        else:
            rest = np.setdiff1d(np.arange(len(pool)), chosen)
            nextPick = int(rng.choice(rest))
        chosen.append(nextPick)
        squared = np.minimum(
            squared, ((embeddings - embeddings[nextPick]) ** 2).sum(axis=1))
    return [pool[i].region for i in chosen]


def randomFeasibleRegion(shape: Shape, imageId: int, side: int,
                         excluded: Sequence[Region],
                         rng: np.random.Generator,
                         cycle: int = 0) -> Region | None:
    """
    Uniform draw over every feasible region (all slices for volumes), by
    exhaustive enumeration of feasible origins.  None when none remain.
    """
    if len(shape) == 1:
        taken = {r.roiIndex for r in excluded if r.isRoi}
        free = [i for i in range(shape[0]) if i not in taken]
        return Region.roi(imageId, int(rng.choice(free)), cycle) \
            if free else None

    height, width = shape[-2:]
    slices: List[int | None] = list(range(shape[0])) if len(shape) == 3 \
        else [None]
    masks = [feasibleOrigins(height, width, side, excluded, z)
             for z in slices]
    counts = [int(m.sum()) for m in masks]
    total = sum(counts)
    if total == 0:
        return None
    draw = int(rng.integers(total))
    for z, mask, count in zip(slices, masks, counts):
        if draw < count:
            y, x = divmod(int(np.flatnonzero(mask)[draw]), mask.shape[1])
            return Region.square(imageId, y, x, side, z, cycle)
        draw -= count
    return None


def drawRegion(shape: Shape, imageId: int, side: int,
               rng: np.random.Generator, cycle: int = 0) -> Region:
    if len(shape) == 1:
        return Region.roi(imageId, int(rng.integers(shape[0])), cycle)
    height, width = shape[-2:]
    z = int(rng.integers(shape[0])) if len(shape) == 3 else None
    y = int(rng.integers(height - side + 1))
    x = int(rng.integers(width - side + 1))
    return Region.square(imageId, y, x, side, z, cycle)


def randSelectRegions(shape: Shape, imageId: int, side: int, n: int,
                      excluded: Sequence[Region], rng: np.random.Generator,
                      cycle: int = 0) -> List[Region]:
    """
    Up to `n` uniformly random, mutually disjoint regions avoiding
    `excluded`.  Each pick tries rejection sampling first and falls back to
    exhaustive enumeration after `RAND_MAX_ATTEMPTS` misses.
    """
    blocked = list(excluded)
    picks: List[Region] = []
    for _ in range(n):
        region: Region | None = None
        for _attempt in range(constants.RAND_MAX_ATTEMPTS):
            candidate = drawRegion(shape, imageId, side, rng, cycle)
            if not any(regionsOverlap(candidate, b) for b in blocked):
                region = candidate
                break
        if region is None:
            region = randomFeasibleRegion(shape, imageId, side, blocked,
                                          rng, cycle)
        if region is None:
            LOGGER.debug(f'Image ({imageId}) has no feasible region left '
                         f'after {len(picks)} random picks')
            break
        picks.append(region)
        blocked.append(region)
    return picks


def randSelectImages(imageIds: Sequence[int], state: AnnotationState,
                     n: int, rng: np.random.Generator) -> List[int]:
    ranked = [int(i) for i in rng.permutation(sorted(imageIds))]
    return state.takeFromLoop(ranked, n)
