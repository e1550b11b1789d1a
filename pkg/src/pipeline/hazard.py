"""
Hazard: Snow hazard ratio from a single raw image.

    RsL = S(T(I)) == road      (road surface label, from the translated bare-road image)
    ScL = S(I) == snow         (snow covered label, from the raw image)
    SHR = pix(RsL & ScL) / pix(RsL)

Masks are compared at the raw image resolution. An image without road pixels is
reported as NoRoadDetected, never as SHR = 0.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, Sequence

import numpy as np

from src.pipeline.samples import FakeRoadImage, InputImage, MaskImage, SceneClass
from src.pipeline.transform import resize_mask
from src.utils.errors import DimensionError, NoRoadDetected, SnowHazardError
from src.utils.logger import module_logger

logger = module_logger(__name__)


class Translator(Protocol):
    def translate_image(self, image: InputImage) -> FakeRoadImage: ...


class Segmenter(Protocol):
    def segment_image(self, image: InputImage) -> MaskImage: ...


@dataclass(frozen=True)
class ShrRatio:
    numerator: int
    denominator: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator

    @property
    def percent(self) -> float:
        return 100.0 * self.numerator / self.denominator


@dataclass
class HazardReport:
    image_id: str
    pix_road: int
    pix_snow_over_road: int
    intersection: MaskImage
    road_label: MaskImage
    snow_label: MaskImage
    fake: FakeRoadImage | None = None

    @property
    def shr(self) -> ShrRatio:
        return ShrRatio(self.pix_snow_over_road, self.pix_road)

    @property
    def shr_percent(self) -> float:
        return round(self.shr.percent, 2)


def _values(mask) -> np.ndarray:
    return mask.values if isinstance(mask, MaskImage) else np.asarray(mask)


def pix(mask) -> int:
    """Number of set pixels of a binary mask."""
    return int(np.count_nonzero(_values(mask)))


def shr(rsl, scl, image_id: str | None = None) -> ShrRatio:
    """pix(rsl & scl) / pix(rsl) as an exact integer pair."""
    road, snow = _values(rsl).astype(bool), _values(scl).astype(bool)
    if road.shape != snow.shape:
        raise DimensionError(f"road mask {road.shape} != snow mask {snow.shape}", axis="spatial")
    denominator = int(np.count_nonzero(road))
    if denominator == 0:
        raise NoRoadDetected(image_id)
    return ShrRatio(int(np.count_nonzero(road & snow)), denominator)


def _at_size(mask: MaskImage, image: InputImage) -> MaskImage:
    if (mask.height, mask.width) == (image.height, image.width):
        return mask
    return resize_mask(mask, image.height, image.width)


def _translate_and_label(translator: Translator, segmenter: Segmenter, image: InputImage):
    fake = translator.translate_image(image)
    labels = _at_size(segmenter.segment_image(fake.to_input_image()), image)
    return fake, MaskImage.from_binary(labels.binary(SceneClass.ROAD))


def road_surface_label(translator: Translator, segmenter: Segmenter, image: InputImage) -> MaskImage:
    """RsL: road pixels of S(T(I)), binary, at the image's resolution."""
    return _translate_and_label(translator, segmenter, image)[1]


def snow_label(segmenter: Segmenter, image: InputImage) -> MaskImage:
    """ScL: snow pixels of S(I), binary, at the image's resolution."""
    labels = _at_size(segmenter.segment_image(image), image)
    return MaskImage.from_binary(labels.binary(SceneClass.SNOW))


def compute_report(translator: Translator, segmenter: Segmenter, image: InputImage) -> HazardReport:
    fake, rsl = _translate_and_label(translator, segmenter, image)
    scl = snow_label(segmenter, image)
    ratio = shr(rsl, scl, image.image_id)
    intersection = MaskImage.from_binary(rsl.values.astype(bool) & scl.values.astype(bool))
    return HazardReport(
        image_id=image.image_id,
        pix_road=ratio.denominator,
        pix_snow_over_road=ratio.numerator,
        intersection=intersection,
        road_label=rsl,
        snow_label=scl,
        fake=fake,
    )


@dataclass
class BatchResult:
    reports: list[HazardReport]
    failures: list[tuple[str, str]]


def compute_reports(
    translator: Translator,
    segmenter: Segmenter,
    images: Sequence[InputImage],
    workers: int = 1,
) -> BatchResult:
    """Reports for many images on a bounded pool; input order is kept and a failing image never stops the batch."""

    def one(image: InputImage):
        try:
            return compute_report(translator, segmenter, image)
        except SnowHazardError as exc:
            return exc
        except Exception as exc:
            logger.exception("Unexpected error on image %s", image.image_id)
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(one, images))

    result = BatchResult([], [])
    for image, outcome in zip(images, outcomes):
        if isinstance(outcome, HazardReport):
            result.reports.append(outcome)
        else:
            logger.warning("Image %s skipped: %s", image.image_id, outcome)
            message = str(outcome) if isinstance(outcome, SnowHazardError) else f"{type(outcome).__name__}: {outcome}"
            result.failures.append((image.image_id, message))
    return result
