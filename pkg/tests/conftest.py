"""Shared fixtures: project root on sys.path, small synthetic datasets, oracle stubs."""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (enable with --run-slow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_spec():
    from src.pipeline.synth import SceneSpec
    return SceneSpec(height=32, width=48, coverage=0.5, noise_scale=6, pole_count=1, seed=3)


@pytest.fixture
def scenes(small_spec):
    from src.pipeline.synth import scene_specs, synth_dataset
    specs = scene_specs(small_spec, 6, coverage=[0.2, 0.5, 0.8], seed=5)
    return synth_dataset(specs)


@pytest.fixture
def dataset_dir(tmp_path, scenes):
    from src.pipeline.extract import write_scene
    data_dir = tmp_path / "data"
    for scene in scenes:
        write_scene(scene, data_dir)
    return data_dir


class OracleTranslator:
    """T(I) that returns the scene's true bare image."""

    def __init__(self, scenes):
        self.by_bytes = {s.snow.pixels.tobytes(): s for s in scenes}

    def translate_image(self, image):
        from src.pipeline.samples import FakeRoadImage
        scene = self.by_bytes[image.pixels.tobytes()]
        return FakeRoadImage(image.image_id, scene.bare.to_float())


class OracleSegmenter:
    """S(I) that looks the image up and returns its truth mask (snow or bare)."""

    def __init__(self, scenes):
        self.masks = {}
        for s in scenes:
            self.masks[s.snow.pixels.tobytes()] = s.mask
            self.masks[s.bare.pixels.tobytes()] = s.bare_mask

    def segment_image(self, image):
        return self.masks[image.pixels.tobytes()]


@pytest.fixture
def oracles(scenes):
    return OracleTranslator(scenes), OracleSegmenter(scenes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def disk_oracles():
    """Factory for oracle stubs backed by a dataset folder written with write_scene."""
    from types import SimpleNamespace

    def build(data_dir):
        from src.pipeline.extract import load_mask, read_paired
        scenes = [
            SimpleNamespace(
                snow=pair.snow,
                bare=pair.bare,
                mask=load_mask(data_dir / "masks" / f"{pair.sample_id}.png"),
                bare_mask=load_mask(data_dir / "bare_masks" / f"{pair.sample_id}.png"),
            )
            for pair in read_paired(data_dir)
        ]
        translator, segmenter = OracleTranslator(scenes), OracleSegmenter(scenes)
        translator.config = segmenter.config = SimpleNamespace(to_dict=dict)
        return translator, segmenter

    return build
