# -*- coding: utf-8 -*-
import logging
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import confusion_matrix, f1_score

from region_sampling.core import AnnotationState, ImageRecord

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClassReport:
    """
    Per-class scores (IoU, Dice or F1) with class supports.  `defined`
    marks classes whose score has a non-zero denominator; the others hold 0
    and are left out of the macro mean.
    """
    values: np.ndarray
    support: np.ndarray
    defined: np.ndarray

    @property
    def macro(self) -> float:
        if not self.defined.any():
            return 0.0
        return float(self.values[self.defined].mean())

    @property
    def weighted(self) -> float:
        total = self.support.sum()
        if total == 0:
            return 0.0
        return float(np.dot(self.support / total, self.values))


def confusionMatrix(pred: np.ndarray, true: np.ndarray,
                    numClasses: int) -> np.ndarray:
    """
    Rows are true classes 1..C, columns predicted classes.

    :raises ValueError: when the label maps differ in shape.
    """
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f'Prediction shape {pred.shape} != ground truth '
                         f'shape {true.shape}.')
    return confusion_matrix(true.ravel(), pred.ravel(),
                            labels=np.arange(1, numClasses + 1))


def overlapReport(pred: np.ndarray, true: np.ndarray, numClasses: int,
                  truePositiveWeight: int) -> ClassReport:
    matrix = confusionMatrix(pred, true, numClasses)
    tp = np.diag(matrix)
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    numerator = truePositiveWeight * tp
    denominator = truePositiveWeight * tp + fp + fn
    defined = denominator > 0
    values = np.divide(numerator, denominator,
                       out=np.zeros(numClasses), where=defined)
    return ClassReport(values, matrix.sum(axis=1), defined)


def iou(pred: np.ndarray, true: np.ndarray, numClasses: int) -> ClassReport:
    return overlapReport(pred, true, numClasses, 1)


def dice(pred: np.ndarray, true: np.ndarray, numClasses: int) -> ClassReport:
    return overlapReport(pred, true, numClasses, 2)


def f1Report(pred: np.ndarray, true: np.ndarray,
             numClasses: int) -> ClassReport:
    # Per class, F1 = 2TP / (2TP + FP + FN), the same ratio as Dice.
    return dice(pred, true, numClasses)


def weightedF1(pred: np.ndarray, true: np.ndarray, numClasses: int) -> float:
    confusionMatrix(pred, true, numClasses)
    return float(f1_score(np.ravel(true), np.ravel(pred),
                          labels=np.arange(1, numClasses + 1),
                          average='weighted', zero_division=0))


def perClassAnnotationRatio(state: AnnotationState,
                            images: Sequence[ImageRecord],
                            numClasses: int) -> np.ndarray:
    """
    Annotated pixels of each true class over all pool pixels of that class.
    """
    total = np.zeros(numClasses, dtype=np.int64)
    for image in images:
        total += np.bincount(image.hiddenLabels.ravel() - 1,
                             minlength=numClasses)[:numClasses]
    return np.divide(state.classCounts(numClasses), total,
                     out=np.zeros(numClasses), where=total > 0)


def confidenceAlignment(sigmaHistory: Sequence[Sequence[float]],
                        metricHistory: Sequence[Sequence[float]]
                        ) -> List[float]:
    """
    Spearman rank correlation between class confidences and per-class test
    scores, one value per cycle (NaN when either vector is constant).
    """
    if len(sigmaHistory) != len(metricHistory):
        raise ValueError(f'History lengths differ: {len(sigmaHistory)} vs '
                         f'{len(metricHistory)}.')
    correlations: List[float] = []
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        for sigma, scores in zip(sigmaHistory, metricHistory):
            correlations.append(float(spearmanr(sigma, scores)[0]))
    return correlations
