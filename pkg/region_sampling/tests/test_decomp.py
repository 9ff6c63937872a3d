# -*- coding: utf-8 -*-
import time
from collections import Counter

import numpy as np
import pytest

import constants
from region_sampling.core import (
    AnnotationState,
    ImageRecord,
    Oracle,
    PredictionField,
    Region,
    annotate,
    regionIndex,
    regionsOverlap
)
from region_sampling.decomp import (
    ClassConfidence,
    ClassWindows,
    ImageScore,
    SamplingWeights,
    classConfidence,
    decompSelect,
    defaultCap,
    imageScore,
    sampleClass,
    samplingWeights,
    selectImages,
    selectRegionForClass
)
from region_sampling.integral import buildIntegral, windowArgmax


def confidence(sigma) -> ClassConfidence:
    sigma = np.asarray(sigma, dtype=np.float64)
    return ClassConfidence(sigma, np.ones_like(sigma), sigma)


def weights(w) -> SamplingWeights:
    return SamplingWeights(np.asarray(w, dtype=np.float64))


def selectionSeconds(height: int, width: int, repeats: int = 3) -> float:
    """
    Best-of-`repeats` wall time of one selection pass (image score plus
    ten region picks) on a 19-class map.
    """
    rng = np.random.default_rng(0)
    labels = rng.integers(1, 20, size=(height, width))
    image = ImageRecord(0, np.zeros((height, width, 1), dtype=np.float32),
                        labels, constants.MODE_SEGMENTATION_2D)
    pred = PredictionField(0, labels, rng.random((height, width)))
    w = weights(np.full(19, 1 / 19))
    times = []
    for seed in range(repeats):
        started = time.perf_counter()
        imageScore(pred, w, defaultCap(image.shape, image.mode))
        picks = decompSelect(image, pred, w, 10, 32, AnnotationState(),
                             np.random.default_rng(seed))
        times.append(time.perf_counter() - started)
        assert len(picks) == 10
    return min(times)


class TestClassConfidence:

    def test_example(self, makePrediction):
        pred = makePrediction([1, 1, 1], maxProb=[0.8, 0.6, 0.9])
        result = classConfidence([pred], 0.7, 2)
        assert result.sigma[0] == pytest.approx(2 / 3)
        assert result.sigma[1] == 0.0
        np.testing.assert_array_equal(result.predictionCounts, [3, 0])

    def test_fully_confident(self, makePrediction):
        pred = makePrediction([[2, 2]], maxProb=[[1.0, 1.0]])
        assert classConfidence([pred], 0.7, 2).sigma[1] == 1.0

    def test_strict_threshold(self, makePrediction):
        pred = makePrediction([1], maxProb=[0.7])
        assert classConfidence([pred], 0.7, 1).sigma[0] == 0.0

    def test_naive_oracle(self, makePrediction):
        rng = np.random.default_rng(4)
        for _ in range(50):
            numClasses = int(rng.integers(2, 6))
            tau = float(rng.uniform(0.2, 0.9))
            pool = [makePrediction(rng.integers(1, numClasses + 1,
                                                size=(5, 6)), i,
                                   rng.random((5, 6)))
                    for i in range(int(rng.integers(1, 10)))]
            confident = [0] * numClasses
            total = [0] * numClasses
            for pred in pool:
                for label, prob in zip(pred.pseudoLabels.ravel(),
                                       pred.maxProb.ravel()):
                    total[label - 1] += 1
                    confident[label - 1] += prob > tau
            expected = [c / t if t else 0.0 for c, t in zip(confident, total)]
            np.testing.assert_array_equal(
                classConfidence(pool, tau, numClasses).sigma, expected)

    def test_threads_agree(self, makePrediction):
        rng = np.random.default_rng(8)
        pool = [makePrediction(rng.integers(1, 4, size=(8, 8)), i,
                               rng.random((8, 8))) for i in range(6)]
        np.testing.assert_array_equal(
            classConfidence(pool, 0.5, 3, threads=1).sigma,
            classConfidence(pool, 0.5, 3, threads=4).sigma)

    def test_bad_input(self, makePrediction):
        with pytest.raises(ValueError):
            classConfidence([makePrediction([1])], 1.0, 2)
        with pytest.raises(ValueError):
            classConfidence([], 0.5, 2)


class TestSamplingWeights:

    def test_examples(self):
        np.testing.assert_allclose(samplingWeights(confidence([0.5, 0.5])).w,
                                   [0.5, 0.5])
        np.testing.assert_allclose(samplingWeights(confidence([1.0, 0.0])).w,
                                   [0.0, 1.0])
        np.testing.assert_allclose(
            samplingWeights(confidence([1.0, 1.0, 1.0])).w, [1 / 3] * 3)

    def test_sum_and_order(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            sigma = rng.random(int(rng.integers(2, 20)))
            w = samplingWeights(confidence(sigma)).w
            assert abs(w.sum() - 1.0) <= 1e-12
            order = np.argsort(sigma)
            assert np.all(np.diff(w[order]) < 0)

    def test_mask(self):
        w = samplingWeights(confidence([0.0, 0.0, 0.5]), [1.0, 0.0, 1.0]).w
        np.testing.assert_allclose(w, [2 / 3, 0.0, 1 / 3])


class TestImageScore:

    def test_example(self, makePrediction):
        labels = np.array([1] * 100 + [2] * 50)
        score = imageScore(makePrediction(labels), weights([0.2, 0.8]), 1000)
        assert score.score == pytest.approx(60.0)

    def test_single_class(self, makePrediction):
        pred = makePrediction(np.full((20, 30), 2))
        cap = defaultCap((20, 30), constants.MODE_SEGMENTATION_2D)
        score = imageScore(pred, weights([1 / 3] * 3), cap)
        assert score.score == pytest.approx(0.1 * 600 / 3)

    def test_empty_roi_image(self, makePrediction):
        pred = PredictionField(0, np.zeros(0, dtype=np.int64), np.zeros(0))
        assert imageScore(pred, weights([0.5, 0.5]), 1).score == 0.0

    def test_cap_makes_large_counts_equal(self, makePrediction):
        cap = 10
        w = weights([0.6, 0.4])
        small = makePrediction(np.array([1] * cap + [2] * 5))
        large = makePrediction(np.array([1] * (10 * cap) + [2] * 5))
        assert imageScore(small, w, cap).score == \
            imageScore(large, w, cap).score

    def test_monotone(self, makePrediction):
        w = weights([0.3, 0.7])
        scores = [imageScore(makePrediction(np.array([1] * n + [2] * 4)),
                             w, 8).score for n in range(12)]
        assert all(b >= a for a, b in zip(scores, scores[1:]))

    def test_ignore_mask(self, makePrediction):
        pred = makePrediction(np.array([[1, 1], [2, 2]]))
        ignore = np.array([[True, True], [False, False]])
        assert imageScore(pred, weights([0.5, 0.5]), 100, ignore).score == 1.0

    def test_roi_cap(self):
        assert defaultCap((7,), constants.MODE_ROI) == 1.0

    def test_cap_must_be_positive(self, makePrediction):
        with pytest.raises(ValueError):
            imageScore(makePrediction([1]), weights([1.0]), 0)


class TestSelectImages:

    def scores(self, values):
        return [ImageScore(i, s) for i, s in enumerate(values)]

    def test_top_k(self):
        assert selectImages(self.scores([5, 9, 1]), AnnotationState(),
                            2) == [1, 0]

    def test_restart(self):
        state = AnnotationState()
        state.loopVisited = {0, 1, 2}
        assert selectImages(self.scores([5, 9, 1]), state, 1) == [1]

    def test_two_remaining(self):
        state = AnnotationState()
        state.loopVisited = {1, 3}
        assert selectImages(self.scores([5, 9, 1, 7]), state, 3) == [0, 2, 1]

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            selectImages([], AnnotationState(), 1)


class TestSampleClass:

    def test_singleton(self):
        rng = np.random.default_rng(0)
        assert sampleClass(weights([0.9, 0.1, 0.0]), {3}, rng) == 3

    def test_zero_mass_fallback(self):
        rng = np.random.default_rng(0)
        assert sampleClass(weights([1.0, 0.0]), {2}, rng) == 2

    def test_frequencies(self):
        rng = np.random.default_rng(1)
        draws = Counter(sampleClass(weights([0.5, 0.5]), {1, 2}, rng)
                        for _ in range(100_000))
        assert draws[1] / 100_000 == pytest.approx(0.5, abs=0.01)

    def test_renormalized(self):
        rng = np.random.default_rng(2)
        draws = Counter(sampleClass(weights([0.7, 0.2, 0.1]), {2, 3}, rng)
                        for _ in range(30_000))
        assert draws[2] / 30_000 == pytest.approx(2 / 3, abs=0.015)
        assert 1 not in draws


class TestSelectRegionForClass:

    def test_blob(self, makeImage, makePrediction):
        labels = np.ones((12, 12), dtype=np.int64)
        labels[3:7, 5:9] = 2
        region = selectRegionForClass(makeImage(labels),
                                      makePrediction(labels), 2, 4, [],
                                      np.random.default_rng(0))
        assert (region.y, region.x, region.side) == (3, 5, 4)

    def test_absent_class(self, makeImage, makePrediction):
        labels = np.ones((8, 8), dtype=np.int64)
        assert selectRegionForClass(makeImage(labels),
                                    makePrediction(labels), 2, 3, [],
                                    np.random.default_rng(0)) is None

    def test_roi_tie(self, makeImage):
        probs = np.array([[0.9, 0.1], [0.1, 0.9], [0.1, 0.9]])
        pred = PredictionField.fromProbabilities(0, probs)
        image = makeImage(np.array([1, 2, 2]))
        region = selectRegionForClass(image, pred, 2, 1, [],
                                      np.random.default_rng(0))
        assert region.roiIndex == 1
        region = selectRegionForClass(image, pred, 2, 1, [Region.roi(0, 1)],
                                      np.random.default_rng(0))
        assert region.roiIndex == 2

    def test_matches_brute_force(self, makeImage, makePrediction):
        rng = np.random.default_rng(12)
        for _ in range(200):
            height, width = rng.integers(4, 20, size=2)
            numClasses = int(rng.integers(2, 7))
            labels = rng.integers(1, numClasses + 1, size=(height, width))
            side = int(rng.integers(1, min(height, width) + 1))
            excluded = []
            for _ in range(int(rng.integers(0, 3))):
                s = int(rng.integers(1, min(height, width) + 1))
                excluded.append(Region.square(
                    0, rng.integers(0, height - s + 1),
                    rng.integers(0, width - s + 1), s))
            classId = int(rng.integers(1, numClasses + 1))
            region = selectRegionForClass(makeImage(labels),
                                          makePrediction(labels), classId,
                                          side, excluded, rng)

            best = None
            for y in range(height - side + 1):
                for x in range(width - side + 1):
                    window = Region.square(0, y, x, side)
                    if any(regionsOverlap(window, e) for e in excluded):
                        continue
                    count = int((labels[y:y + side, x:x + side]
                                 == classId).sum())
                    if best is None or count > best[1]:
                        best = ((y, x), count)
            if best is None or best[1] == 0:
                assert region is None
            else:
                assert (region.y, region.x) == best[0]

    def test_volume_picks_slice_with_class(self, makeImage, makePrediction):
        labels = np.ones((5, 8, 8), dtype=np.int64)
        labels[3, 2:4, 2:4] = 2
        region = selectRegionForClass(makeImage(labels),
                                      makePrediction(labels), 2, 2, [],
                                      np.random.default_rng(0))
        assert (region.z, region.y, region.x) == (3, 2, 2)

    def test_volume_slice_choice_is_uniform(self, makeImage, makePrediction):
        labels = np.ones((4, 6, 6), dtype=np.int64)
        labels[0, 0, 0] = labels[2, 5, 5] = 2
        image, pred = makeImage(labels), makePrediction(labels)
        slices = Counter(
            selectRegionForClass(image, pred, 2, 2, [],
                                 np.random.default_rng(seed)).z
            for seed in range(400))
        assert set(slices) == {0, 2}
        assert 150 < slices[0] < 250


class TestDecompSelect:

    def test_one_region_per_class(self, makeImage, makePrediction):
        labels = np.ones((16, 16), dtype=np.int64)
        labels[:, 8:] = 2
        image, pred = makeImage(labels), makePrediction(labels)
        both = 0
        for seed in range(1000):
            picks = decompSelect(image, pred, weights([0.5, 0.5]), 2, 4,
                                 AnnotationState(),
                                 np.random.default_rng(seed))
            classes = {int(labels[r.y, r.x]) for r in picks}
            both += classes == {1, 2}
        assert both / 1000 == pytest.approx(0.5, abs=0.06)

    def test_fully_annotated(self, makeImage, makePrediction):
        labels = np.ones((4, 4), dtype=np.int64)
        image = makeImage(labels)
        state = annotate(AnnotationState(), Region.square(0, 0, 0, 4),
                         Oracle([image]))
        assert decompSelect(image, makePrediction(labels), weights([1.0]), 3,
                            2, state, np.random.default_rng(0)) == []

    def test_single_class_sequential_argmax(self, makeImage, makePrediction):
        labels = np.ones((12, 12), dtype=np.int64)
        labels[0:3, 0:3] = 2
        labels[6:9, 6:9] = 2
        labels[0, 11] = 2
        image, pred = makeImage(labels), makePrediction(labels)
        picks = decompSelect(image, pred, weights([0.0, 1.0]), 3, 3,
                             AnnotationState(), np.random.default_rng(3))
        indicator = labels == 2
        excluded = []
        for pick in picks:
            expected = windowArgmax(buildIntegral(indicator), 3, excluded,
                                    requirePositive=True)
            assert (pick.y, pick.x) == expected[0]
            excluded.append(pick)

    def test_disjoint_and_class_bearing(self, makeImage, makePrediction):
        rng = np.random.default_rng(21)
        for seed in range(30):
            labels = rng.integers(1, 4, size=(20, 20))
            image, pred = makeImage(labels), makePrediction(labels)
            state = AnnotationState()
            annotate(state, Region.square(0, 5, 5, 5), Oracle([image]))
            picks = decompSelect(image, pred, weights([0.2, 0.3, 0.5]), 4, 3,
                                 state, np.random.default_rng(seed))
            assert len(picks) == 4
            everything = state.regions + picks
            for i, a in enumerate(everything):
                for b in everything[i + 1:]:
                    assert not regionsOverlap(a, b)

    def test_zero_weight_class_still_sampled(self, makeImage, makePrediction):
        labels = np.ones((8, 8), dtype=np.int64)
        image = makeImage(labels)
        state = annotate(AnnotationState(), Region.square(0, 0, 0, 4),
                         Oracle([image]))
        # Class 1 is predicted only inside the annotated square.
        predicted = np.full((8, 8), 2)
        predicted[:4, :4] = 1
        picks = decompSelect(image, makePrediction(predicted),
                             weights([1.0, 0.0]), 3, 4, state,
                             np.random.default_rng(0))
        assert len(picks) == 3
        for pick in picks:
            assert not regionsOverlap(pick, state.regions[0])
            assert (predicted[regionIndex(pick, (8, 8))] == 2).any()

    def test_roi_mode(self, makeImage):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=10)
        pred = PredictionField.fromProbabilities(0, probs)
        image = makeImage(pred.pseudoLabels)
        picks = decompSelect(image, pred, weights([0.2, 0.3, 0.5]), 4, 1,
                             AnnotationState(), rng)
        assert len({r.roiIndex for r in picks}) == 4

    def test_large_map_is_fast(self):
        assert selectionSeconds(1024, 2048) < 1.0

    def test_time_scales_linearly(self):
        small = selectionSeconds(1024, 1024)
        assert selectionSeconds(1024, 2048) <= 2.5 * small


class TestClassWindows:

    def test_searches_follow_exclusions(self, makePrediction):
        rng = np.random.default_rng(8)
        labels = rng.integers(1, 4, size=(30, 30))
        pred = makePrediction(labels)
        excluded = [Region.square(0, 4, 4, 6)]
        windows = ClassWindows(pred, 5, excluded)
        for classId in (1, 2, 3, 1):
            found = windows.search(classId).best(requirePositive=True)
            expected = windowArgmax(buildIntegral(labels == classId), 5,
                                    windows.excluded, requirePositive=True)
            assert found == expected
            (y, x), _ = found
            windows.exclude(Region.square(0, y, x, 5))
        assert len(windows.searches) == 3
        assert len(windows.excluded) == 5

    def test_slices_are_separate(self, makePrediction):
        labels = np.full((2, 6, 6), 2)
        windows = ClassWindows(makePrediction(labels), 3)
        windows.exclude(Region.square(0, 0, 0, 6, z=0))
        assert windows.search(2, 0).best() is None
        assert windows.search(2, 1).best() == ((0, 0), 9)
