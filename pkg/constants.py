# -*- coding: utf-8 -*-
from typing import Final

MODE_SEGMENTATION_2D: Final[str] = 'segmentation2d'
MODE_SEGMENTATION_3D: Final[str] = 'segmentation3d'
MODE_ROI: Final[str] = 'roi'
MODES: Final[tuple[str, ...]] = (
    MODE_SEGMENTATION_2D, MODE_SEGMENTATION_3D, MODE_ROI)

ACTIVATION_SOFTMAX: Final[str] = 'softmax'
ACTIVATION_SIGMOID: Final[str] = 'sigmoid'
ACTIVATIONS: Final[tuple[str, ...]] = (ACTIVATION_SOFTMAX, ACTIVATION_SIGMOID)

# Confidence threshold for counting a prediction as high-confidence.
DEFAULT_TAU: Final[float] = 0.7
TAU_SWEEP: Final[tuple[float, ...]] = (0.3, 0.5, 0.7)

# Per-class frequency caps used by the image score.
CAP_MODE_FRACTION: Final[str] = 'fraction'
CAP_MODE_ROI: Final[str] = 'roi'
CAP_MODES: Final[tuple[str, ...]] = (CAP_MODE_FRACTION, CAP_MODE_ROI)
DEFAULT_CAP_FRACTION: Final[float] = 0.10
ROI_CAP: Final[int] = 1

DEFAULT_DIVERS_FACTOR: Final[int] = 3
DEFAULT_TARGET_FRACTION: Final[float] = 0.95

KMEANS_MAX_ITER: Final[int] = 100
KMEANS_TOLERANCE: Final[float] = 1e-6

RAND_MAX_ATTEMPTS: Final[int] = 10_000

SOFTMAX_SUM_TOLERANCE: Final[float] = 1e-6

# Float window sums within this fraction of the largest prefix sum tie.
WINDOW_TIE_RTOL: Final[float] = 1e-9

SWEEP_AXES: Final[tuple[str, ...]] = ('tau', 'budget', 'dense-sparse')

CSV_FLOAT_FORMAT: Final[str] = '%.9g'
CYCLES_CSV: Final[str] = 'cycles.csv'
SUMMARY_JSON: Final[str] = 'summary.json'

EXIT_RUNTIME: Final[int] = 1
EXIT_VALIDATION: Final[int] = 2

DTEN_MAGIC: Final[bytes] = b'DTEN'
DTEN_DTYPE_U16: Final[int] = 0
DTEN_DTYPE_F32: Final[int] = 1
