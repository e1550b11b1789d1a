"""Unit tests for the raster records passed between stages."""
import os
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)


def test_mask_accepts_whole_float_labels():
    from src.pipeline.samples import MaskImage
    mask = MaskImage(np.array([[0.0, 1.0], [4.0, 5.0]]))
    assert mask.values.dtype == np.uint8
    np.testing.assert_array_equal(mask.values, [[0, 1], [4, 5]])


@pytest.mark.parametrize("values", [[[0.0, 1.5]], [[np.nan, 1.0]], [[0.999, 2.0]]])
def test_mask_rejects_fractional_labels(values):
    from src.pipeline.samples import MaskImage
    from src.utils.errors import MaskValidationError
    with pytest.raises(MaskValidationError, match="whole class indices"):
        MaskImage(np.array(values))


def test_mask_rejects_non_numeric_dtype():
    from src.pipeline.samples import MaskImage
    from src.utils.errors import MaskValidationError
    with pytest.raises(MaskValidationError):
        MaskImage(np.array([["road", "snow"]]))


def test_mask_range_is_checked():
    from src.pipeline.samples import MaskImage
    from src.utils.errors import MaskValidationError
    with pytest.raises(MaskValidationError):
        MaskImage(np.array([[0, 6]]))
    assert MaskImage.from_binary(np.array([[True, False]])).num_classes == 2


def test_image_must_be_eight_bit_rgb():
    from src.pipeline.samples import InputImage
    from src.utils.errors import InputError
    with pytest.raises(InputError):
        InputImage("x", np.zeros((4, 4, 3), dtype=np.float32))
    with pytest.raises(InputError):
        InputImage("x", np.zeros((4, 4), dtype=np.uint8))


def test_from_float_round_trips_eight_bit_values():
    from src.pipeline.samples import InputImage
    pixels = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3) * 5
    image = InputImage("x", pixels)
    np.testing.assert_array_equal(InputImage.from_float("x", image.to_float()).pixels, pixels)
