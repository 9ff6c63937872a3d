# -*- coding: utf-8 -*-
from pathlib import Path

import numpy as np
import pytest
import yaml

import constants
from region_sampling.core import ImageRecord, PredictionField
from region_sampling.experiment import ExperimentConfig
from region_sampling.simulator import DatasetSpec, ModelSpec


@pytest.fixture
def makeImage():
    def make(labels, imageId: int = 0, nFeatures: int = 1,
             mode: str | None = None) -> ImageRecord:
        labels = np.asarray(labels, dtype=np.int64)
        if mode is None:
            mode = {1: constants.MODE_ROI, 2: constants.MODE_SEGMENTATION_2D,
                    3: constants.MODE_SEGMENTATION_3D}[labels.ndim]
        features = np.repeat(labels[..., np.newaxis], nFeatures, axis=-1) \
            .astype(np.float32)
        return ImageRecord(imageId, features, labels, mode)

    return make


@pytest.fixture
def makePrediction():
    def make(labels, imageId: int = 0, maxProb=None,
             numClasses: int | None = None) -> PredictionField:
        """
        Prediction whose pseudo-labels are `labels`; with `numClasses`
        the full probabilities put `maxProb` on the label and spread the
        rest evenly.
        """
        labels = np.asarray(labels, dtype=np.int64)
        maxProb = np.full(labels.shape, 0.9) if maxProb is None \
            else np.asarray(maxProb, dtype=np.float64)
        if numClasses is None:
            return PredictionField(imageId, labels, maxProb)
        rest = (1.0 - maxProb) / (numClasses - 1)
        probs = np.repeat(rest[..., np.newaxis], numClasses, axis=-1)
        np.put_along_axis(probs, (labels - 1)[..., np.newaxis],
                          maxProb[..., np.newaxis], axis=-1)
        return PredictionField(imageId, labels, maxProb, probs)

    return make


@pytest.fixture
def smallDatasetSpec() -> DatasetSpec:
    return DatasetSpec(mode=constants.MODE_SEGMENTATION_2D, n_images=6,
                       n_test_images=2, shape=(24, 24), n_classes=3,
                       frequencies=(0.6, 0.3, 0.1), n_features=4,
                       noise=0.8, n_cells=8, seed=1)


@pytest.fixture
def smallConfig(smallDatasetSpec) -> ExperimentConfig:
    return ExperimentConfig(dataset=smallDatasetSpec,
                            strategies=('rand', 'decomp'), n_image=2,
                            n_region=2, region_size=4, max_cycles=3,
                            stop_at_target=False, seed=3,
                            model=ModelSpec(epochs=30))


@pytest.fixture
def configFile(tmp_path: Path, smallConfig: ExperimentConfig) -> Path:
    path = tmp_path / 'experiment.yaml'
    path.write_text(yaml.safe_dump(smallConfig.toDict(), sort_keys=False))
    return path
