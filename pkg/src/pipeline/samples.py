"""
Raster records passed between pipeline stages.
Images are H x W x 3 (8-bit at rest, [0,1] in computation); masks are H x W class indices.
"""
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from src.utils.errors import DimensionError, InputError, MaskValidationError

CLASS_NAMES = ("background", "road", "pole-sign", "green", "snow", "sky")


class SceneClass(IntEnum):
    BACKGROUND = 0
    ROAD = 1
    POLE_SIGN = 2
    GREEN = 3
    SNOW = 4
    SKY = 5


@dataclass
class InputImage:
    image_id: str
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InputError(f"image '{self.image_id}' must be H x W x 3, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError(f"image '{self.image_id}' has empty dimensions {px.shape}")
        if px.dtype != np.uint8:
            raise InputError(f"image '{self.image_id}' must be 8-bit, got {px.dtype}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float32) / 255.0

    @classmethod
    def from_float(cls, image_id: str, values: np.ndarray) -> "InputImage":
        q = np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
        return cls(image_id, q)


@dataclass
class FakeRoadImage:
    """Translator output in [0,1], same dimensions as its source image."""

    image_id: str
    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_float(self) -> np.ndarray:
        return self.pixels

    def to_input_image(self) -> InputImage:
        return InputImage.from_float(self.image_id, self.pixels)


@dataclass
class MaskImage:
    values: np.ndarray
    num_classes: int = len(CLASS_NAMES)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise MaskValidationError(f"mask must be H x W, got shape {v.shape}")
        if v.dtype.kind == "f":
            if not np.all(np.isfinite(v)) or not np.array_equal(v, np.floor(v)):
                raise MaskValidationError(f"mask values must be whole class indices, got non-integer {v.dtype} values")
        elif v.dtype.kind not in "biu":
            raise MaskValidationError(f"mask must hold integer class indices, got dtype {v.dtype}")
        if v.size and (v.min() < 0 or v.max() >= self.num_classes):
            raise MaskValidationError(
                f"mask values must lie in 0..{self.num_classes - 1}, found {int(v.min())}..{int(v.max())}"
            )
        self.values = v.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def binary(self, class_index: int) -> np.ndarray:
        """Boolean mask of pixels whose label equals `class_index`."""
        return self.values == class_index

    @classmethod
    def from_binary(cls, mask: np.ndarray) -> "MaskImage":
        return cls(np.asarray(mask, dtype=bool).astype(np.uint8), num_classes=2)


@dataclass
class PairedSample:
    sample_id: str
    snow: InputImage
    bare: InputImage

    def __post_init__(self):
        if self.snow.pixels.shape != self.bare.pixels.shape:
            raise DimensionError(
                f"pair '{self.sample_id}': snow {self.snow.pixels.shape} != bare {self.bare.pixels.shape}",
                axis="spatial",
            )


@dataclass
class AnnotatedSample:
    sample_id: str
    image: InputImage
    mask: MaskImage

    def __post_init__(self):
        if (self.image.height, self.image.width) != (self.mask.height, self.mask.width):
            raise DimensionError(
                f"sample '{self.sample_id}': image {self.image.pixels.shape[:2]} != mask {self.mask.values.shape}",
                axis="spatial",
            )
        if self.mask.num_classes != len(CLASS_NAMES):
            raise MaskValidationError(f"sample '{self.sample_id}': mask must use {len(CLASS_NAMES)} classes")
