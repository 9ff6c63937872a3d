# -*- coding: utf-8 -*-
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

import constants
from region_sampling import baselines, decomp
from region_sampling.core import (
    AnnotationState,
    ImageRecord,
    PredictionField,
    Region
)
from region_sampling.integral import feasibleOrigins
from utils import streamRng

LOGGER = logging.getLogger(__name__)

STREAM_IMAGES = 0
STREAM_REGIONS = 1
STREAM_POOL = 2
STREAM_INITIAL_IMAGES = 3
STREAM_INITIAL_REGIONS = 4

Selection = Dict[int, List[Region]]


@dataclass(frozen=True, eq=False)
class SelectionContext:
    """
    Everything a selector may read during one cycle.  Random streams are
    derived from (seed, repeat, cycle, stream, image id) and never from the
    strategy, so strategies sharing a seed draw identical initial sets.
    """
    images: Mapping[int, ImageRecord]
    predictions: Mapping[int, PredictionField]
    weights: decomp.SamplingWeights | None
    state: AnnotationState
    pool: Sequence[int]
    side: int
    nImage: int
    nRegion: int
    capMode: str
    capFraction: float
    diversFactor: int
    scoreAnnotatedPixels: bool
    seed: int
    repeat: int
    cycle: int
    threads: int = 1

    def rng(self, stream: int, imageId: int = 0) -> np.random.Generator:
        return streamRng(self.seed, self.repeat, self.cycle, stream, imageId)

    def cap(self, image: ImageRecord) -> float:
        if self.capMode == constants.CAP_MODE_ROI:
            return float(constants.ROI_CAP)
        return decomp.defaultCap(image.shape, image.mode, self.capFraction)

    def perImage(self, imageIds: Sequence[int],
                 select: Callable[[int], List[Region]]) -> Selection:
        picks = Parallel(n_jobs=self.threads, prefer='threads')(
            delayed(select)(i) for i in imageIds)
        return dict(zip(imageIds, picks))


ImageSelector = Callable[[SelectionContext], List[int]]
RegionSelector = Callable[[SelectionContext, Sequence[int]], Selection]


def decompImages(ctx: SelectionContext) -> List[int]:
    def score(imageId: int) -> decomp.ImageScore:
        image = ctx.images[imageId]
        ignore = None if ctx.scoreAnnotatedPixels \
            else ctx.state.annotatedMask(image)
        return decomp.imageScore(ctx.predictions[imageId], ctx.weights,
                                 ctx.cap(image), ignore)

    return decomp.selectImages([score(i) for i in ctx.pool], ctx.state,
                               ctx.nImage)


def uncertImages(ctx: SelectionContext) -> List[int]:
    return baselines.uncertSelectImages(
        [ctx.predictions[i] for i in ctx.pool], ctx.state, ctx.nImage)


def randImages(ctx: SelectionContext) -> List[int]:
    return baselines.randSelectImages(ctx.pool, ctx.state, ctx.nImage,
                                      ctx.rng(STREAM_IMAGES))


def decompRegions(ctx: SelectionContext,
                  imageIds: Sequence[int]) -> Selection:
    return ctx.perImage(imageIds, lambda i: decomp.decompSelect(
        ctx.images[i], ctx.predictions[i], ctx.weights, ctx.nRegion,
        ctx.side, ctx.state, ctx.rng(STREAM_REGIONS, i), ctx.cycle))


def uncertRegions(ctx: SelectionContext,
                  imageIds: Sequence[int]) -> Selection:
    return ctx.perImage(imageIds, lambda i: baselines.uncertSelectRegions(
        baselines.uncertaintyMap(ctx.predictions[i]), ctx.side,
        ctx.nRegion, ctx.state.regionsFor(i), i, ctx.cycle))


def randRegions(ctx: SelectionContext, imageIds: Sequence[int]) -> Selection:
    return ctx.perImage(imageIds, lambda i: baselines.randSelectRegions(
        ctx.images[i].shape, i, ctx.side, ctx.nRegion,
        ctx.state.regionsFor(i), ctx.rng(STREAM_REGIONS, i), ctx.cycle))


def pooledRegions(choose: Callable[[List[baselines.Candidate], int,
                                    SelectionContext], List[Region]]
                  ) -> RegionSelector:
    """
    Wrap a pool-level selector: build the uncertainty candidate pool over
    the selected images, then pick n_image·n_region regions from it.
    """

    def select(ctx: SelectionContext, imageIds: Sequence[int]) -> Selection:
        pool = baselines.diversCandidatePool(
            [ctx.predictions[i] for i in imageIds], ctx.side,
            ctx.diversFactor, ctx.nRegion, ctx.state, ctx.cycle,
            ctx.threads)
        budget = ctx.nRegion * len(imageIds)
        selection: Selection = {i: [] for i in imageIds}
        if pool:
            for region in choose(pool, budget, ctx):
                selection[region.imageId].append(region)
        return selection

    return select


IMAGE_SELECTORS: Dict[str, ImageSelector] = {
    'decomp': decompImages,
    'uncert': uncertImages,
    'rand': randImages
}

REGION_SELECTORS: Dict[str, RegionSelector] = {
    'decomp': decompRegions,
    'uncert': uncertRegions,
    'rand': randRegions,
    'divers_cluster': pooledRegions(
        lambda pool, budget, ctx: baselines.diversClusterSelect(
            pool, budget, ctx.rng(STREAM_POOL))),
    'divers_coreset': pooledRegions(
        lambda pool, budget, ctx: baselines.diversCoresetSelect(
            pool, budget)),
    'badge': pooledRegions(
        lambda pool, budget, ctx: baselines.badgeSelect(
            pool, budget, ctx.rng(STREAM_POOL)))
}

# Named strategies as (image selector, region selector).  Anything else can
# be given as "image/region", e.g. "uncert/decomp".
STRATEGY_PAIRS: Dict[str, tuple[str, str]] = {
    'rand': ('rand', 'rand'),
    'uncert': ('uncert', 'uncert'),
    'divers_cluster': ('uncert', 'divers_cluster'),
    'divers_coreset': ('uncert', 'divers_coreset'),
    'badge': ('uncert', 'badge'),
    'decomp': ('decomp', 'decomp'),
    'uncert_decomp': ('uncert', 'decomp'),
    'decomp_uncert': ('decomp', 'uncert'),
    'decomp_divers_cluster': ('decomp', 'divers_cluster'),
    'decomp_divers_coreset': ('decomp', 'divers_coreset')
}


@dataclass(frozen=True)
class Strategy:
    name: str
    imageSelectorName: str
    regionSelectorName: str

    @property
    def imageSelector(self) -> ImageSelector:
        return IMAGE_SELECTORS[self.imageSelectorName]

    @property
    def regionSelector(self) -> RegionSelector:
        return REGION_SELECTORS[self.regionSelectorName]

    @property
    def needsWeights(self) -> bool:
        return 'decomp' in (self.imageSelectorName, self.regionSelectorName)


def parseStrategy(name: str) -> Strategy:
    """
    :raises ValueError: for unknown strategy names or selector halves.
    """
    if name in STRATEGY_PAIRS:
        return Strategy(name, *STRATEGY_PAIRS[name])
    imageName, _, regionName = name.partition('/')
    if imageName not in IMAGE_SELECTORS or regionName not in REGION_SELECTORS:
        raise ValueError(f'Unknown strategy "{name}"; use one of '
                         f'{", ".join(STRATEGY_PAIRS)} or "image/region" '
                         f'with image in {sorted(IMAGE_SELECTORS)} and '
                         f'region in {sorted(REGION_SELECTORS)}.')
    return Strategy(name, imageName, regionName)


def hasFeasibleRegion(image: ImageRecord, side: int,
                      excluded: Sequence[Region]) -> bool:
    if image.isRoi:
        return len(excluded) < image.shape[0]
    height, width = image.shape[-2:]
    slices = range(image.shape[0]) if image.isVolume else [None]
    return any(feasibleOrigins(height, width, side, excluded, z).any()
               for z in slices)


def eligibleImageIds(images: Sequence[ImageRecord], state: AnnotationState,
                     side: int) -> List[int]:
    return [i.id for i in images
            if hasFeasibleRegion(i, side, state.regionsFor(i.id))]


def initialSelection(ctx: SelectionContext) -> tuple[List[int], Selection]:
    """
    Random images, then random disjoint regions in each, from streams that
    do not depend on the strategy.
    """
    imageIds = baselines.randSelectImages(ctx.pool, ctx.state, ctx.nImage,
                                          ctx.rng(STREAM_INITIAL_IMAGES))
    selection = ctx.perImage(imageIds, lambda i: baselines.randSelectRegions(
        ctx.images[i].shape, i, ctx.side, ctx.nRegion,
        ctx.state.regionsFor(i), ctx.rng(STREAM_INITIAL_REGIONS, i),
        ctx.cycle))
    return imageIds, selection
