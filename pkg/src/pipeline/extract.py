"""
Extract: Read and write images, masks and synthetic-dataset folders.
Images are 8-bit RGB PNG; masks are 8-bit single-channel PNG holding class indices.
Dataset layout (names from the `dataset` config section):
    <data>/snow/<id>.png  <data>/bare/<id>.png  <data>/masks/<id>.png
    <data>/bare_masks/<id>.png  <data>/meta/<id>.yaml
"""
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from src.pipeline.samples import AnnotatedSample, InputImage, MaskImage, PairedSample
from src.utils.config import project_root
from src.utils.errors import DataIOError, MaskValidationError
from src.utils.logger import module_logger

logger = module_logger(__name__)

DEFAULT_LAYOUT = {
    "snow_dir": "snow",
    "bare_dir": "bare",
    "masks_dir": "masks",
    "bare_masks_dir": "bare_masks",
    "meta_dir": "meta",
}
IMAGE_SUFFIX = ".png"


def data_path(relative_path: str | Path) -> Path:
    """Config paths are relative to the project root; absolute paths pass through."""
    path = Path(relative_path)
    return path if path.is_absolute() else project_root() / path


def _open(path: Path) -> Image.Image:
    if not path.exists():
        raise DataIOError("file not found", path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError, SyntaxError, Image.DecompressionBombError) as exc:
        raise DataIOError(f"cannot decode image ({exc})", path) from exc
    return img


def load_image(path: str | Path, image_id: str | None = None) -> InputImage:
    path = Path(path)
    img = _open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return InputImage(image_id or path.stem, np.array(img, dtype=np.uint8))


def save_image(image: InputImage, path: str | Path) -> Path:
    return _save(Image.fromarray(np.ascontiguousarray(image.pixels, dtype=np.uint8)), Path(path))


def load_mask(path: str | Path, num_classes: int = 6) -> MaskImage:
    """Read a class-index mask; values outside 0..num_classes-1 raise MaskValidationError."""
    path = Path(path)
    img = _open(path)
    if img.mode not in ("L", "P"):
        raise MaskValidationError(f"mask must be single-channel 8-bit, got mode {img.mode}: {path}")
    values = np.array(img, dtype=np.uint8)
    try:
        return MaskImage(values, num_classes=num_classes)
    except MaskValidationError as exc:
        raise MaskValidationError(f"{path}: {exc}") from exc


def save_mask(mask: MaskImage, path: str | Path) -> Path:
    return _save(Image.fromarray(np.ascontiguousarray(mask.values, dtype=np.uint8)), Path(path))


def _save(img: Image.Image, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format="PNG")
    except OSError as exc:
        raise DataIOError(f"cannot write image ({exc})", path) from exc
    return path


def list_ids(directory: str | Path) -> list[str]:
    """Sorted stems of the PNG files in a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataIOError("directory not found", directory)
    return sorted(p.stem for p in directory.iterdir() if p.suffix.lower() == IMAGE_SUFFIX)


def read_images(directory: str | Path) -> list[InputImage]:
    directory = Path(directory)
    return [load_image(directory / f"{i}{IMAGE_SUFFIX}", i) for i in list_ids(directory)]


def _layout(layout: dict | None) -> dict:
    return {**DEFAULT_LAYOUT, **(layout or {})}


def read_paired(data_dir: str | Path, layout: dict | None = None, ids: list[str] | None = None) -> list[PairedSample]:
    """(snow, bare) pairs for every id present in the snow folder (or the given ids)."""
    lay = _layout(layout)
    root = Path(data_dir)
    snow_dir, bare_dir = root / lay["snow_dir"], root / lay["bare_dir"]
    ids = list_ids(snow_dir) if ids is None else ids
    return [
        PairedSample(i, load_image(snow_dir / f"{i}{IMAGE_SUFFIX}", i), load_image(bare_dir / f"{i}{IMAGE_SUFFIX}", i))
        for i in ids
    ]


def read_annotated(
    data_dir: str | Path,
    layout: dict | None = None,
    ids: list[str] | None = None,
    include_bare: bool = False,
) -> list[AnnotatedSample]:
    """Snow frames with their masks; with include_bare also bare frames (id suffix `_bare`)."""
    lay = _layout(layout)
    root = Path(data_dir)
    ids = list_ids(root / lay["snow_dir"]) if ids is None else ids
    samples = []
    for i in ids:
        samples.append(AnnotatedSample(
            i,
            load_image(root / lay["snow_dir"] / f"{i}{IMAGE_SUFFIX}", i),
            load_mask(root / lay["masks_dir"] / f"{i}{IMAGE_SUFFIX}"),
        ))
        if include_bare:
            bare_id = f"{i}_bare"
            samples.append(AnnotatedSample(
                bare_id,
                load_image(root / lay["bare_dir"] / f"{i}{IMAGE_SUFFIX}", bare_id),
                load_mask(root / lay["bare_masks_dir"] / f"{i}{IMAGE_SUFFIX}"),
            ))
    return samples


def read_scene_meta(data_dir: str | Path, scene_id: str, layout: dict | None = None) -> dict:
    path = Path(data_dir) / _layout(layout)["meta_dir"] / f"{scene_id}.yaml"
    if not path.exists():
        raise DataIOError("scene metadata not found", path)
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def write_scene(scene, data_dir: str | Path, layout: dict | None = None) -> None:
    """Write the four rasters and the metadata sidecar of one SyntheticScene."""
    lay = _layout(layout)
    root = Path(data_dir)
    name = f"{scene.scene_id}{IMAGE_SUFFIX}"
    save_image(scene.snow, root / lay["snow_dir"] / name)
    save_image(scene.bare, root / lay["bare_dir"] / name)
    save_mask(scene.mask, root / lay["masks_dir"] / name)
    save_mask(scene.bare_mask, root / lay["bare_masks_dir"] / name)
    meta_path = root / lay["meta_dir"] / f"{scene.scene_id}.yaml"
    try:
        meta_path.parent.mkdir(parents=True, exist_ok=True)
        with open(meta_path, "w", encoding="utf-8") as f:
            yaml.safe_dump(scene.metadata, f, sort_keys=False)
    except OSError as exc:
        raise DataIOError(f"cannot write metadata ({exc.strerror})", meta_path) from exc
