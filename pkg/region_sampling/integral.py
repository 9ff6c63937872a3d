# -*- coding: utf-8 -*-
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

import constants
from region_sampling.core import Region

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IntegralTable:
    """
    Summed-area table of a 2-D map, padded with a leading row and column of
    zeros: `sums[y][x]` is the sum of the source over [0, y)×[0, x).
    Integer and boolean sources accumulate exactly in int64, anything else
    in float64.
    """
    sums: np.ndarray

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    def rectSum(self, y0: int, x0: int, y1: int, x1: int) -> int | float:
        s = self.sums
        return (s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]).item()

    def windowSums(self, side: int) -> np.ndarray:
        """
        Sums of every side×side window, indexed by window origin, with
        shape (H - side + 1, W - side + 1).
        """
        checkSide(side, self.height, self.width)
        s = self.sums
        return s[side:, side:] - s[:-side, side:] - s[side:, :-side] \
            + s[:-side, :-side]


def checkSide(side: int, height: int, width: int) -> None:
    if side < 1 or side > min(height, width):
        raise ValueError(f'Window side {side} does not fit '
                         f'{height}x{width}.')


def buildIntegral(values: np.ndarray) -> IntegralTable:
    values = np.asarray(values)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f'Integral tables need a non-empty 2-D map, got '
                         f'shape {values.shape}.')
    dtype = np.int64 if values.dtype.kind in 'biu' else np.float64
    sums = np.zeros((values.shape[0] + 1, values.shape[1] + 1), dtype=dtype)
    sums[1:, 1:] = np.cumsum(np.cumsum(values, axis=0, dtype=dtype), axis=1)
    return IntegralTable(sums)


def feasibleOrigins(height: int, width: int, side: int,
                    excluded: Sequence[Region] = (),
                    sliceIndex: int | None = None) -> np.ndarray:
    """
    Boolean map over window origins: True where a side×side window lies
    inside the image and shares no pixel with any excluded square on the
    same slice.  Each exclusion removes one rectangle of origins found by
    two interval tests.
    """
    checkSide(side, height, width)
    mask = np.ones((height - side + 1, width - side + 1), dtype=bool)
    for region in excluded:
        if region.isRoi or region.z != sliceIndex:
            continue
        suppressOrigins(mask, region, side)
    return mask


def suppressOrigins(scores: np.ndarray, region: Region, side: int,
                    fill: bool | int | float = False) -> None:
    """
    Set, in place, every origin whose side×side window would touch the
    square `region` to `fill`.  Works on feasibility masks and on score
    maps alike.
    """
    y0 = max(0, region.y - side + 1)
    x0 = max(0, region.x - side + 1)
    scores[y0:region.y + region.side, x0:region.x + region.side] = fill


def tieTolerance(table: IntegralTable) -> float:
    """
    Slack under which two window sums of `table` count as equal: zero for
    exact integer tables, otherwise a small fraction of the largest prefix
    sum.
    """
    if table.sums.dtype.kind in 'iu':
        return 0.0
    return constants.WINDOW_TIE_RTOL * float(np.abs(table.sums).max())


def maskedArgmax(values: np.ndarray, feasible: np.ndarray,
                 tolerance: float = 0.0
                 ) -> tuple[tuple[int, ...], int | float] | None:
    """
    Position and value of the largest feasible entry.  Entries within
    `tolerance` of the largest tie, and the first of them in row-major
    order wins.  None when nothing is feasible.
    """
    if not feasible.any():
        return None
    scores = np.where(feasible, values, -np.inf)
    flat = int(np.argmax(scores))
    if tolerance > 0:
        flat = int(np.argmax(scores >= scores.flat[flat] - tolerance))
    position = np.unravel_index(flat, scores.shape)
    return tuple(int(p) for p in position), values[position].item()


class WindowSearch:
    """
    Repeated best-window lookups on one map while squares are taken out of
    it.  Window sums are computed once; each exclusion only overwrites the
    origins it blocks.

    :param table: Integral table of the map to scan.
    :param side: Window side; must fit the map.
    :param excluded: Regions no window may touch.  Only squares on
        `sliceIndex` are considered.
    :param sliceIndex: Slice the table was built from (volumes only).
    """

    def __init__(self, table: IntegralTable, side: int,
                 excluded: Sequence[Region] = (),
                 sliceIndex: int | None = None):
        sums = table.windowSums(side)
        self.side = side
        self.sliceIndex = sliceIndex
        self.tolerance = tieTolerance(table)
        self.blocked: int | float = np.iinfo(np.int64).min \
            if sums.dtype.kind in 'iu' else -np.inf
        self.scores = sums
        for region in excluded:
            self.exclude(region)

    def exclude(self, region: Region) -> None:
        if region.isRoi or region.z != self.sliceIndex:
            return
        suppressOrigins(self.scores, region, self.side, self.blocked)

    def best(self, requirePositive: bool = False
             ) -> tuple[tuple[int, int], int | float] | None:
        """
        ((y, x), sum) of the best window still feasible, smallest (y, x) on
        ties; None when no window qualifies.
        """
        flat = int(np.argmax(self.scores))
        value = self.scores.flat[flat].item()
        if value == self.blocked or (requirePositive and value <= 0):
            return None
        if self.tolerance > 0:
            flat = int(np.argmax(self.scores >= value - self.tolerance))
            value = self.scores.flat[flat].item()
        y, x = np.unravel_index(flat, self.scores.shape)
        return (int(y), int(x)), value


def windowArgmax(table: IntegralTable, side: int,
                 excluded: Sequence[Region] = (),
                 requirePositive: bool = False,
                 sliceIndex: int | None = None
                 ) -> tuple[tuple[int, int], int | float] | None:
    """
    Find the feasible side×side window with the largest sum.

    :param requirePositive: Return None when the best sum is not > 0.
    :return: ((y, x), sum) of the best window, smallest (y, x) on ties, or
        None when no window qualifies.
    """
    return WindowSearch(table, side, excluded, sliceIndex) \
        .best(requirePositive)


def windowMeanMap(table: IntegralTable, side: int) -> np.ndarray:
    return table.windowSums(side).astype(np.float64) / float(side * side)
