# -*- coding: utf-8 -*-
import logging
from dataclasses import dataclass, field
import sys
from typing import Iterable, List, Mapping, Protocol, Sequence

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np

import constants

LOGGER = logging.getLogger(__name__)

Shape = tuple[int, ...]


class RegionBoundsError(ValueError):
    pass


class RegionOverlapError(ValueError):
    pass


class OracleAuditError(RuntimeError):
    pass


def expectedRank(mode: str) -> int:
    if mode == constants.MODE_SEGMENTATION_2D:
        return 2
    if mode == constants.MODE_SEGMENTATION_3D:
        return 3
    if mode == constants.MODE_ROI:
        return 1
    raise ValueError(f'Unknown mode "{mode}".')


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """
    One pool or test image.  `hiddenLabels` holds class ids 1..C and is
    only meant to be read through an `Oracle` (or by evaluation code for
    test images).  `features` has one trailing axis of length F on top of
    the image shape: (H, W, F), (D, H, W, F) or (M, F) for ROI images.
    """
    id: int
    features: np.ndarray
    hiddenLabels: np.ndarray
    mode: str = constants.MODE_SEGMENTATION_2D

    def __post_init__(self):
        shape = self.hiddenLabels.shape
        if len(shape) != expectedRank(self.mode):
            raise ValueError(f'{self.mode} image ({self.id}) needs rank '
                             f'{expectedRank(self.mode)} labels, got {shape}.')
        if any(s < 1 for s in shape):
            raise ValueError(f'Image ({self.id}) has an empty axis: {shape}.')
        if self.features.ndim != len(shape) + 1 or \
                self.features.shape[:-1] != shape:
            raise ValueError(f'Image ({self.id}) features '
                             f'{self.features.shape} do not match {shape}.')
        if self.hiddenLabels.min() < 1:
            raise ValueError(f'Image ({self.id}) has class ids below 1.')

    @property
    def shape(self) -> Shape:
        return tuple(self.hiddenLabels.shape)

    @property
    def size(self) -> int:
        return int(self.hiddenLabels.size)

    @property
    def nFeatures(self) -> int:
        return int(self.features.shape[-1])

    @property
    def isRoi(self) -> bool:
        return self.mode == constants.MODE_ROI

    @property
    def isVolume(self) -> bool:
        return self.mode == constants.MODE_SEGMENTATION_3D

    def __str__(self) -> str:
        return f'{self.__class__.__name__} ({self.id}): ' \
               f'{self.mode} {self.shape}'


@dataclass(frozen=True, eq=False)
class PredictionField:
    imageId: int
    pseudoLabels: np.ndarray
    maxProb: np.ndarray
    fullProbs: np.ndarray | None = None
    activation: str = constants.ACTIVATION_SOFTMAX

    @classmethod
    def fromProbabilities(cls, imageId: int, probs: np.ndarray,
                          activation: str = constants.ACTIVATION_SOFTMAX
                          ) -> Self:
        """
        Derive pseudo-labels and max-probabilities from a C-channel map.
        `np.argmax` returns the first maximum, so ties go to the lowest
        class id.
        """
        probs = np.asarray(probs, dtype=np.float64)
        pseudoLabels = np.argmax(probs, axis=-1).astype(np.int64) + 1
        return cls(imageId, pseudoLabels, probs.max(axis=-1), probs,
                   activation)

    @property
    def shape(self) -> Shape:
        return tuple(self.pseudoLabels.shape)

    @property
    def numClasses(self) -> int | None:
        return None if self.fullProbs is None \
            else int(self.fullProbs.shape[-1])

    def classCounts(self, numClasses: int,
                    ignore: np.ndarray | None = None) -> np.ndarray:
        labels = self.pseudoLabels if ignore is None \
            else self.pseudoLabels[~ignore]
        return np.bincount(labels.ravel() - 1,
                           minlength=numClasses)[:numClasses]

    def validate(self) -> None:
        if self.maxProb.shape != self.pseudoLabels.shape:
            raise ValueError(f'Prediction ({self.imageId}): max_prob shape '
                             f'{self.maxProb.shape} != {self.shape}.')
        if self.fullProbs is None:
            return
        if not np.array_equal(self.maxProb, self.fullProbs.max(axis=-1)):
            raise ValueError(f'Prediction ({self.imageId}): max_prob is not '
                             'the channel maximum.')
        if not np.array_equal(self.pseudoLabels,
                              np.argmax(self.fullProbs, axis=-1) + 1):
            raise ValueError(f'Prediction ({self.imageId}): pseudo-labels '
                             'are not the channel argmax.')
        if self.activation == constants.ACTIVATION_SOFTMAX and not np.allclose(
                self.fullProbs.sum(axis=-1), 1.0, rtol=0,
                atol=constants.SOFTMAX_SUM_TOLERANCE):
            raise ValueError(f'Prediction ({self.imageId}): probabilities do '
                             'not sum to 1.')


@dataclass(frozen=True)
class Region:
    """
    An annotation unit: an `side`×`side` square at (`y`, `x`) (on slice
    `z` for volumes) or the ROI `roiIndex`.  Equality is geometric; the
    selection cycle is provenance only.
    """
    imageId: int
    y: int = 0
    x: int = 0
    side: int = 0
    z: int | None = None
    roiIndex: int | None = None
    cycleSelected: int = field(default=0, compare=False)

    @classmethod
    def square(cls, imageId: int, y: int, x: int, side: int,
               z: int | None = None, cycle: int = 0) -> Self:
        return cls(int(imageId), int(y), int(x), int(side),
                   None if z is None else int(z), None, int(cycle))

    @classmethod
    def roi(cls, imageId: int, index: int, cycle: int = 0) -> Self:
        return cls(int(imageId), 0, 0, 0, None, int(index), int(cycle))

    @property
    def isRoi(self) -> bool:
        return self.roiIndex is not None

    @property
    def area(self) -> int:
        return 1 if self.isRoi else self.side * self.side

    @property
    def sortKey(self) -> tuple[int, int, int, int, int]:
        return (self.imageId, -1 if self.z is None else self.z,
                self.y, self.x, -1 if self.roiIndex is None
                else self.roiIndex)

    def __str__(self) -> str:
        if self.isRoi:
            return f'{self.__class__.__name__} ({self.imageId}): ' \
                   f'roi {self.roiIndex}'
        where = f'({self.y}, {self.x})' if self.z is None \
            else f'({self.z}, {self.y}, {self.x})'
        return f'{self.__class__.__name__} ({self.imageId}): ' \
               f'{self.side}x{self.side} at {where}'


def checkRegion(region: Region, shape: Shape) -> None:
    if region.isRoi:
        if len(shape) != 1:
            raise RegionBoundsError(f'{region} used on non-ROI shape {shape}.')
        if not 0 <= region.roiIndex < shape[0]:
            raise RegionBoundsError(f'{region} outside {shape[0]} ROIs.')
        return

    if region.side < 1:
        raise RegionBoundsError(f'{region} has side < 1.')
    if len(shape) == 3:
        if region.z is None or not 0 <= region.z < shape[0]:
            raise RegionBoundsError(f'{region} needs a slice in '
                                    f'[0, {shape[0]}).')
    elif len(shape) != 2 or region.z is not None:
        raise RegionBoundsError(f'{region} does not fit shape {shape}.')

    height, width = shape[-2:]
    if region.y < 0 or region.x < 0 or region.y + region.side > height \
            or region.x + region.side > width:
        raise RegionBoundsError(f'{region} exceeds bounds {shape}.')


def regionIndex(region: Region, shape: Shape) -> tuple:
    """
    Return a numpy index selecting the region's pixels (or its ROI).
    """
    checkRegion(region, shape)
    if region.isRoi:
        return (slice(region.roiIndex, region.roiIndex + 1),)
    rows = slice(region.y, region.y + region.side)
    cols = slice(region.x, region.x + region.side)
    return (rows, cols) if region.z is None \
        else (slice(region.z, region.z + 1), rows, cols)


def regionPixels(region: Region, shape: Shape) -> frozenset[tuple[int, ...]]:
    """
    Return the coordinates covered by `region`.  Squares yield side²
    coordinates ((y, x), or (z, y, x) on their slice); ROIs yield the
    single coordinate `(roiIndex,)`.

    :raises RegionBoundsError: when the region does not fit `shape`.
    """
    checkRegion(region, shape)
    if region.isRoi:
        return frozenset({(region.roiIndex,)})
    span = range(region.side)
    if region.z is None:
        return frozenset((region.y + dy, region.x + dx)
                         for dy in span for dx in span)
    return frozenset((region.z, region.y + dy, region.x + dx)
                     for dy in span for dx in span)


def regionsOverlap(a: Region, b: Region) -> bool:
    if a.imageId != b.imageId:
        return False
    if a.isRoi or b.isRoi:
        return a.roiIndex == b.roiIndex
    if a.z != b.z:
        return False
    return a.y < b.y + b.side and b.y < a.y + a.side \
        and a.x < b.x + b.side and b.x < a.x + a.side


class Oracle(object):
    """
    Stands in for the human annotator: reveals ground truth for a region
    and nothing else.
    """

    def __init__(self, images: Iterable[ImageRecord]):
        self.__images: dict[int, ImageRecord] = {i.id: i for i in images}

    def image(self, imageId: int) -> ImageRecord:
        return self.__images[imageId]

    def reveal(self, region: Region) -> np.ndarray:
        image = self.__images[region.imageId]
        return image.hiddenLabels[regionIndex(region, image.shape)].copy()


class AnnotationState(object):
    """
    The labeled set: selected regions per image, their revealed labels,
    and the image ids visited in the current selection loop.  Only the
    orchestrating thread mutates it.
    """

    def __init__(self):
        self.__regions: dict[int, List[Region]] = {}
        self.__revealed: dict[Region, np.ndarray] = {}
        self.loopVisited: set[int] = set()

    def regionsFor(self, imageId: int) -> List[Region]:
        return list(self.__regions.get(imageId, []))

    @property
    def regions(self) -> List[Region]:
        return [r for rs in self.__regions.values() for r in rs]

    @property
    def revealedPixelCount(self) -> int:
        return sum(v.size for v in self.__revealed.values())

    def revealedLabels(self, region: Region) -> np.ndarray:
        return self.__revealed[region]

    def add(self, region: Region, labels: np.ndarray) -> None:
        for existing in self.__regions.get(region.imageId, []):
            if regionsOverlap(existing, region):
                raise RegionOverlapError(f'{region} overlaps {existing}.')
        self.__regions.setdefault(region.imageId, []).append(region)
        self.__revealed[region] = labels

    def classCounts(self, numClasses: int) -> np.ndarray:
        counts = np.zeros(numClasses, dtype=np.int64)
        for labels in self.__revealed.values():
            counts += np.bincount(labels.ravel() - 1,
                                  minlength=numClasses)[:numClasses]
        return counts

    def annotatedMask(self, image: ImageRecord) -> np.ndarray:
        mask = np.zeros(image.shape, dtype=bool)
        for region in self.__regions.get(image.id, []):
            mask[regionIndex(region, image.shape)] = True
        return mask

    def labeledData(self, images: Mapping[int, ImageRecord]
                    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Gather (features, labels) for every revealed pixel/ROI, in
        annotation order.
        """
        featureBlocks: List[np.ndarray] = []
        labelBlocks: List[np.ndarray] = []
        for region in self.regions:
            image = images[region.imageId]
            block = image.features[regionIndex(region, image.shape)]
            featureBlocks.append(block.reshape(-1, image.nFeatures))
            labelBlocks.append(self.__revealed[region].ravel())
        if not featureBlocks:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64)
        return np.concatenate(featureBlocks), np.concatenate(labelBlocks)

    def audit(self, images: Mapping[int, ImageRecord]) -> None:
        """
        Re-read hidden labels at every selected coordinate and check
        pairwise disjointness.

        :raises OracleAuditError: on any mismatch or overlap.
        """
        for imageId, regions in self.__regions.items():
            image = images[imageId]
            for i, region in enumerate(regions):
                hidden = image.hiddenLabels[regionIndex(region, image.shape)]
                if not np.array_equal(hidden, self.__revealed[region]):
                    raise OracleAuditError(f'Revealed labels of {region} '
                                           'differ from ground truth.')
                for other in regions[i + 1:]:
                    if regionsOverlap(region, other):
                        raise OracleAuditError(f'{region} overlaps {other}.')
        if len(self.__revealed) != len(self.regions):
            raise OracleAuditError('Revealed labels exist for regions that '
                                   'were never selected.')

    def takeFromLoop(self, ranked: Sequence[int], n: int) -> List[int]:
        """
        Take up to `n` ids from `ranked` (best first) that were not visited
        in the current loop.  When the loop runs dry the visited set is
        cleared and selection continues over the full ranking; ids taken
        before the reset stay excluded from this batch but do not count
        as visited in the new loop.

        :raises ValueError: when `ranked` is empty or `n` < 1.
        """
        if len(ranked) == 0:
            raise ValueError('Cannot select images from an empty pool.')
        if n < 1:
            raise ValueError(f'Cannot select {n} images.')

        selected: List[int] = []
        while len(selected) < n:
            remaining = [i for i in ranked
                         if i not in self.loopVisited and i not in selected]
            if remaining:
                taken = remaining[:n - len(selected)]
                selected.extend(taken)
                self.loopVisited.update(taken)
                continue
            if all(i in selected for i in ranked):
                break
            LOGGER.info('Every pool image was visited; starting a new loop.')
            self.loopVisited.clear()
        return selected


def rankByScore(scores: Mapping[int, float]) -> List[int]:
    """
    Image ids ordered best first; equal scores go to the lowest id.
    """
    return sorted(scores, key=lambda i: (-scores[i], i))


def annotate(state: AnnotationState, region: Region,
             oracle: Oracle) -> AnnotationState:
    """
    Reveal `region` through `oracle` and add it to `state`.

    :raises RegionBoundsError: when the region does not fit its image.
    :raises RegionOverlapError: when it overlaps an annotated region.
    """
    image = oracle.image(region.imageId)
    checkRegion(region, image.shape)
    for existing in state.regionsFor(region.imageId):
        if regionsOverlap(existing, region):
            raise RegionOverlapError(f'{region} overlaps {existing}.')
    state.add(region, oracle.reveal(region))
    LOGGER.debug(f'Annotated {region}')
    return state


class Predictor(Protocol):
    def predict(self, image: ImageRecord) -> PredictionField:
        ...


@dataclass(frozen=True)
class ModelHandle:
    cycle: int
    predictor: Predictor

    def __post_init__(self):
        if self.cycle < 1:
            raise ValueError(f'Model cycle must be >= 1, got {self.cycle}.')
