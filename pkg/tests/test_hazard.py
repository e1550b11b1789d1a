"""Unit tests for the snow hazard ratio."""
import os
from fractions import Fraction
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)


def loop_shr(road, snow):
    num = den = 0
    for i in range(road.shape[0]):
        for j in range(road.shape[1]):
            if road[i, j]:
                den += 1
                if snow[i, j]:
                    num += 1
    return num, den


class BlankTranslator:
    """T(I) that always returns a black frame of the same size."""

    def translate_image(self, image):
        from src.pipeline.samples import FakeRoadImage
        return FakeRoadImage(image.image_id, np.zeros(image.pixels.shape, dtype=np.float32))


class FixedSegmenter:
    """S that labels the black translated frame with `road_labels` and anything else with `raw_labels`."""

    def __init__(self, road_labels, raw_labels):
        from src.pipeline.samples import MaskImage
        self.road = MaskImage(np.asarray(road_labels))
        self.raw = MaskImage(np.asarray(raw_labels))

    def segment_image(self, image):
        return self.raw if image.pixels.any() else self.road


def _raw(image_id="img", shape=(4, 4)):
    from src.pipeline.samples import InputImage
    return InputImage(image_id, np.full(shape + (3,), 200, dtype=np.uint8))


def test_shr_matches_loop_oracle_on_random_pairs():
    from src.pipeline.hazard import shr
    from src.utils.errors import NoRoadDetected
    rng = np.random.default_rng(0)
    for _ in range(100):
        h, w = rng.integers(1, 12, size=2)
        road = rng.random((h, w)) < rng.uniform(0.1, 0.9)
        snow = rng.random((h, w)) < rng.uniform(0.0, 1.0)
        num, den = loop_shr(road, snow)
        if den == 0:
            with pytest.raises(NoRoadDetected):
                shr(road, snow)
            continue
        ratio = shr(road, snow)
        assert (ratio.numerator, ratio.denominator) == (num, den)
        assert ratio.fraction == Fraction(num, den)


@pytest.mark.parametrize(
    "road,snow,expected",
    [
        ([[1, 1], [1, 1]], [[0, 0], [0, 0]], (0, 4)),
        ([[1, 1], [1, 1]], [[1, 1], [1, 1]], (4, 4)),
        ([[1, 1], [0, 0]], [[0, 0], [1, 1]], (0, 2)),
        ([[1, 1], [1, 0]], [[1, 0], [0, 0]], (1, 3)),
        ([[0, 1], [0, 0]], [[1, 1], [1, 1]], (1, 1)),
    ],
    ids=["no-snow", "full", "disjoint", "snow-inside-road", "road-inside-snow"],
)
def test_shr_edge_cases(road, snow, expected):
    from src.pipeline.hazard import shr
    ratio = shr(np.array(road), np.array(snow))
    assert (ratio.numerator, ratio.denominator) == expected
    assert 0.0 <= ratio.percent <= 100.0


def test_no_road_is_not_zero():
    from src.pipeline.hazard import shr
    from src.utils.errors import NoRoadDetected
    with pytest.raises(NoRoadDetected) as info:
        shr(np.zeros((3, 3)), np.ones((3, 3)), image_id="empty")
    assert info.value.image_id == "empty"


def test_mask_shapes_must_agree():
    from src.pipeline.hazard import shr
    from src.utils.errors import DimensionError
    with pytest.raises(DimensionError):
        shr(np.ones((3, 3)), np.ones((3, 4)))


def test_pix_counts_set_pixels():
    from src.pipeline.hazard import pix
    from src.pipeline.samples import MaskImage
    assert pix(np.array([[0, 1], [1, 1]])) == 3
    assert pix(MaskImage.from_binary(np.zeros((2, 2)))) == 0


def test_oracle_models_reproduce_truth(scenes, oracles):
    from src.pipeline.hazard import compute_report
    translator, segmenter = oracles
    for scene in scenes:
        report = compute_report(translator, segmenter, scene.snow)
        assert (report.pix_snow_over_road, report.pix_road) == scene.truth_shr
        assert report.intersection.values.sum() == scene.snow_road_pixels


def test_snow_off_the_road_is_not_counted():
    from src.pipeline.hazard import compute_report
    from src.pipeline.samples import SceneClass
    road = np.zeros((4, 4), dtype=int)
    road[2:, :] = SceneClass.ROAD
    raw = np.full((4, 4), SceneClass.SNOW)
    raw[2:, :] = SceneClass.ROAD
    report = compute_report(BlankTranslator(), FixedSegmenter(road, raw), _raw())
    assert report.pix_road == 8
    assert report.pix_snow_over_road == 0
    assert report.shr_percent == 0.0


def test_road_label_comes_from_the_translated_frame():
    from src.pipeline.hazard import compute_report
    from src.pipeline.samples import SceneClass
    # Raw segmentation sees snow everywhere and no road; RsL must still come from S(T(I)).
    road = np.full((4, 4), SceneClass.SKY)
    road[3, :] = SceneClass.ROAD
    raw = np.full((4, 4), SceneClass.SNOW)
    report = compute_report(BlankTranslator(), FixedSegmenter(road, raw), _raw())
    assert (report.pix_snow_over_road, report.pix_road) == (4, 4)
    assert report.shr_percent == 100.0


def test_labels_are_resized_to_image_resolution():
    from src.pipeline.hazard import compute_report
    from src.pipeline.samples import SceneClass
    road = np.full((2, 2), SceneClass.ROAD)
    raw = np.array([[SceneClass.SNOW, SceneClass.SNOW], [SceneClass.ROAD, SceneClass.ROAD]])
    report = compute_report(BlankTranslator(), FixedSegmenter(road, raw), _raw(shape=(4, 6)))
    assert report.road_label.values.shape == (4, 6)
    assert (report.pix_snow_over_road, report.pix_road) == (12, 24)


def test_shr_percent_rounds_to_two_places():
    from src.pipeline.hazard import compute_report
    from src.pipeline.samples import SceneClass
    road = np.full((1, 3), SceneClass.ROAD)
    raw = np.array([[SceneClass.SNOW, SceneClass.ROAD, SceneClass.ROAD]])
    report = compute_report(BlankTranslator(), FixedSegmenter(road, raw), _raw(shape=(1, 3)))
    assert report.shr_percent == 33.33


def test_batch_keeps_order_and_records_failures(scenes, oracles):
    from src.pipeline.hazard import compute_reports
    from src.pipeline.samples import InputImage, MaskImage, SceneClass
    translator, segmenter = oracles
    sky = InputImage("sky_only", np.full((32, 48, 3), 180, dtype=np.uint8))
    translator.by_bytes[sky.pixels.tobytes()] = SimpleNamespace(bare=sky)
    segmenter.masks[sky.pixels.tobytes()] = MaskImage(np.full((32, 48), SceneClass.SKY))

    images = [scenes[0].snow, sky, scenes[1].snow, scenes[2].snow]
    result = compute_reports(translator, segmenter, images, workers=3)
    assert [r.image_id for r in result.reports] == [scenes[i].scene_id for i in range(3)]
    assert [f[0] for f in result.failures] == ["sky_only"]
    assert "No road pixels" in result.failures[0][1]


def test_batch_is_independent_of_worker_count(scenes, oracles):
    from src.pipeline.hazard import compute_reports
    translator, segmenter = oracles
    images = [s.snow for s in scenes]
    one = compute_reports(translator, segmenter, images, workers=1)
    many = compute_reports(translator, segmenter, images, workers=4)
    assert [(r.image_id, r.pix_road, r.pix_snow_over_road) for r in one.reports] == [
        (r.image_id, r.pix_road, r.pix_snow_over_road) for r in many.reports
    ]


def test_shr_is_monotone_in_snow():
    from src.pipeline.hazard import shr
    rng = np.random.default_rng(7)
    road = rng.random((10, 14)) < 0.6
    snow = np.zeros_like(road)
    previous = shr(road, snow).fraction
    for index in rng.permutation(snow.size):
        snow.reshape(-1)[index] = True
        current = shr(road, snow).fraction
        assert current >= previous
        previous = current
    assert previous == 1

    inside = np.flatnonzero(road & snow)
    for index in rng.permutation(inside):
        snow.reshape(-1)[index] = False
        current = shr(road, snow).fraction
        assert current <= previous
        previous = current
    assert previous == 0


class ExplodingTranslator:
    """Raises a plain runtime error for one image id and blanks every other frame."""

    def __init__(self, bad_id):
        self.bad_id = bad_id

    def translate_image(self, image):
        if image.image_id == self.bad_id:
            raise RuntimeError("numerical failure")
        return BlankTranslator().translate_image(image)


def test_batch_survives_unexpected_errors():
    from src.pipeline.hazard import compute_reports
    from src.pipeline.samples import SceneClass
    road = np.full((4, 4), SceneClass.ROAD)
    raw = np.full((4, 4), SceneClass.SNOW)
    images = [_raw("a"), _raw("b"), _raw("c")]
    result = compute_reports(ExplodingTranslator("b"), FixedSegmenter(road, raw), images, workers=2)
    assert [r.image_id for r in result.reports] == ["a", "c"]
    assert result.failures == [("b", "RuntimeError: numerical failure")]


@pytest.mark.slow
def test_trained_pipeline_tracks_true_coverage():
    """|shr - truth| <= 0.15 on at least 80% of held-out scenes; mean SHR rises with coverage."""
    from src.models.segmenter import SegmenterConfig, train_segmenter
    from src.models.translator import TranslatorConfig, train_translator
    from src.pipeline.hazard import compute_reports
    from src.pipeline.samples import AnnotatedSample, PairedSample
    from src.pipeline.synth import SceneSpec, scene_specs, synth_dataset
    from src.pipeline.transform import prepare_segmenter_samples
    base = SceneSpec(height=64, width=96, jitter_geometry=True)
    train = synth_dataset(scene_specs(base, 200, seed=41), workers=4)
    translator, _ = train_translator([PairedSample(s.scene_id, s.snow, s.bare) for s in train],
                                     TranslatorConfig(epochs=10))
    frames = []
    for s in train:
        frames += [AnnotatedSample(s.scene_id, s.snow, s.mask),
                   AnnotatedSample(f"{s.scene_id}_bare", s.bare, s.bare_mask)]
    segmenter, _ = train_segmenter(prepare_segmenter_samples(frames, 96), SegmenterConfig(epochs=30))

    coverages = [round(0.1 * k, 1) for k in range(1, 10)]
    held_out = synth_dataset(scene_specs(base, 3 * len(coverages), coverage=coverages, seed=43),
                             prefix="held", workers=4)
    result = compute_reports(translator, segmenter, [s.snow for s in held_out], workers=4)
    by_id = {r.image_id: r for r in result.reports}

    errors, measured = [], {p: [] for p in coverages}
    for i, scene in enumerate(held_out):
        report = by_id.get(scene.scene_id)
        ratio = report.shr.ratio if report is not None else None
        truth = scene.snow_road_pixels / scene.road_pixels
        errors.append(abs(ratio - truth) if ratio is not None else float("inf"))
        if ratio is not None:
            measured[coverages[i % len(coverages)]].append(ratio)
    assert sum(e <= 0.15 for e in errors) >= 0.8 * len(errors)
    means = [np.mean(measured[p]) for p in coverages if measured[p]]
    assert len(means) == len(coverages)
    assert all(b >= a for a, b in zip(means, means[1:]))
