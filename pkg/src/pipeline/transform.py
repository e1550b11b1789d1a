"""
Transform: Resize, crop and split rasters; convert them to network tensors.
- Bilinear resize uses the same half-pixel interpolation weights as the engine's upsampling.
- Masks resize by nearest neighbour so class indices stay valid.
- tile_crops / assemble_crops implement the rows x cols crop procedure.
- split is a seeded shuffle with round-half-up train size.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from src.gradtensor.nn import interpolation_matrix
from src.pipeline.samples import AnnotatedSample, FakeRoadImage, InputImage, MaskImage
from src.utils.errors import ConfigError, DimensionError, InputError


def resize_array(values: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize of an H x W (x C) array, float64 result."""
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"target size must be positive, got {target_h}x{target_w}", axis="spatial")
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[:2]
    if (h, w) == (target_h, target_w):
        return values.copy()
    mh = interpolation_matrix(h, target_h)
    mw = interpolation_matrix(w, target_w)
    if values.ndim == 2:
        return mh @ values @ mw.T
    return np.einsum("ih,hwc,jw->ijc", mh, values, mw)


def resize(image: InputImage, target_h: int, target_w: int) -> InputImage:
    """Bilinear resize of an 8-bit image (rounded back to 8 bits)."""
    if (image.height, image.width) == (target_h, target_w):
        return InputImage(image.image_id, image.pixels.copy())
    out = resize_array(image.pixels, target_h, target_w)
    return InputImage(image.image_id, np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_fake(image: FakeRoadImage, target_h: int, target_w: int) -> FakeRoadImage:
    out = resize_array(image.pixels, target_h, target_w)
    return FakeRoadImage(image.image_id, np.clip(out, 0.0, 1.0).astype(np.float32))


def nearest_indices(in_size: int, out_size: int) -> np.ndarray:
    """Source index floor((d + 0.5) * in / out) for every output index d."""
    idx = np.floor((np.arange(out_size) + 0.5) * in_size / out_size).astype(np.int64)
    return np.clip(idx, 0, in_size - 1)


def resize_mask(mask: MaskImage, target_h: int, target_w: int) -> MaskImage:
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"target size must be positive, got {target_h}x{target_w}", axis="spatial")
    rows = nearest_indices(mask.height, target_h)
    cols = nearest_indices(mask.width, target_w)
    return MaskImage(mask.values[np.ix_(rows, cols)], num_classes=mask.num_classes)


def tile_crops(raster: np.ndarray, rows: int = 2, cols: int = 4, size: int = 299) -> list[np.ndarray]:
    """Non-overlapping size x size crops from the top-left rows*size x cols*size block, row-major."""
    h, w = raster.shape[:2]
    if h < rows * size:
        raise DimensionError(f"height {h} < {rows} x {size}", axis="height")
    if w < cols * size:
        raise DimensionError(f"width {w} < {cols} x {size}", axis="width")
    return [
        raster[r * size:(r + 1) * size, c * size:(c + 1) * size].copy()
        for r in range(rows)
        for c in range(cols)
    ]


def assemble_crops(crops: Sequence[np.ndarray], rows: int, cols: int) -> np.ndarray:
    if len(crops) != rows * cols:
        raise DimensionError(f"expected {rows * cols} crops, got {len(crops)}", axis="count")
    return np.concatenate(
        [np.concatenate(crops[r * cols:(r + 1) * cols], axis=1) for r in range(rows)], axis=0
    )


@dataclass
class SplitConfig:
    train_fraction: float = 0.9
    seed: int = 0

    def validate(self) -> "SplitConfig":
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        return self


def train_size(n: int, fraction: float) -> int:
    """round-half-up(fraction * n), computed on the decimal fraction exactly."""
    exact = Fraction(str(fraction)) * n
    return math.floor(exact + Fraction(1, 2))


def split(ids: Sequence[str], config: SplitConfig) -> tuple[list[str], list[str]]:
    """Seeded shuffle of the sorted ids; the first round-half-up(f * N) go to train."""
    if not ids:
        raise InputError("cannot split an empty id list")
    config.validate()
    ordered = sorted(ids)
    perm = np.random.default_rng(config.seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    k = train_size(len(ordered), config.train_fraction)
    return shuffled[:k], shuffled[k:]


def to_network_range(pixels: np.ndarray) -> np.ndarray:
    """H x W x 3 in [0,1] -> 3 x H x W in [-1,1], float32."""
    return (np.asarray(pixels, dtype=np.float32).transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)


def from_network_range(chw: np.ndarray) -> np.ndarray:
    """3 x H x W in [-1,1] -> H x W x 3 in [0,1]."""
    return np.clip((np.asarray(chw, dtype=np.float32).transpose(1, 2, 0) + 1.0) * 0.5, 0.0, 1.0)


def images_to_batch(images: Sequence) -> np.ndarray:
    """Stack images (anything with to_float()) into an N x 3 x H x W batch in [-1,1]."""
    return np.stack([to_network_range(img.to_float()) for img in images]).astype(np.float32)


def prepare_segmenter_samples(
    samples: Sequence[AnnotatedSample], size: int, tiles: dict | None = None
) -> list[AnnotatedSample]:
    """Bring annotated frames to the segmenter's square input size.

    Without tiles every frame is resized to size x size. With tiles {rows, cols}
    a frame is resized to rows*size x cols*size and cut into row-major crops.
    """
    prepared: list[AnnotatedSample] = []
    for sample in samples:
        if not tiles:
            prepared.append(AnnotatedSample(
                sample.sample_id,
                resize(sample.image, size, size),
                resize_mask(sample.mask, size, size),
            ))
            continue
        rows, cols = int(tiles["rows"]), int(tiles["cols"])
        image = resize(sample.image, rows * size, cols * size)
        mask = resize_mask(sample.mask, rows * size, cols * size)
        image_crops = tile_crops(image.pixels, rows, cols, size)
        mask_crops = tile_crops(mask.values, rows, cols, size)
        for k, (ic, mc) in enumerate(zip(image_crops, mask_crops)):
            crop_id = f"{sample.sample_id}_r{k // cols}c{k % cols}"
            prepared.append(AnnotatedSample(crop_id, InputImage(crop_id, ic), MaskImage(mc)))
    return prepared
