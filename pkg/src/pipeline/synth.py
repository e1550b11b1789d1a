"""
Synth: Procedural road scenes with exact truth masks.

A scene is sky (vertical gradient), a vegetation band above the horizon, off-road
ground below it, a road trapezoid narrowing toward the horizon and a few poles with
sign plates beside the road. Snow is multi-octave value noise thresholded so that
the covered share of road pixels equals the requested coverage; off-road ground
gets its own noise field and coverage. Every raster is seeded by the scene spec.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from src.pipeline.samples import InputImage, MaskImage, SceneClass
from src.pipeline.transform import resize_array
from src.utils.config import build_dataclass
from src.utils.errors import ConfigError, GenerationError
from src.utils.logger import module_logger

logger = module_logger(__name__)

BASE_COLORS = {
    SceneClass.BACKGROUND: (122, 104, 84),
    SceneClass.ROAD: (72, 72, 78),
    SceneClass.POLE_SIGN: (225, 185, 40),
    SceneClass.GREEN: (58, 118, 52),
    SceneClass.SNOW: (238, 240, 246),
}
SKY_TOP = (96, 150, 215)
SKY_HORIZON = (188, 208, 232)

COVERAGE_TOLERANCE = 0.02
_BISECTION_STEPS = 60


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 96
    coverage: float = 0.5
    background_coverage: float | None = None
    horizon: float = 0.40
    near_width: float = 0.80
    far_width: float = 0.12
    center_offset: float = 0.0
    noise_scale: float = 16.0
    noise_octaves: int = 3
    pole_count: int = 2
    vegetation_height: float = 0.08
    sky_gradient: float = 1.0
    texture_noise: float = 6.0
    jitter_geometry: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, values: dict | None) -> "SceneSpec":
        return build_dataclass(cls, values, "synth")

    def validate(self) -> "SceneSpec":
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"scene must be at least 8x8, got {self.height}x{self.width}")
        if not 0 <= self.coverage <= 1:
            raise ConfigError(f"coverage must be in [0, 1], got {self.coverage}")
        if self.background_coverage is not None and not 0 <= self.background_coverage <= 1:
            raise ConfigError(f"background_coverage must be in [0, 1], got {self.background_coverage}")
        if not 0.05 <= self.horizon <= 0.9:
            raise ConfigError(f"horizon must be in [0.05, 0.9], got {self.horizon}")
        if not 0 < self.far_width <= self.near_width <= 1:
            raise ConfigError(f"need 0 < far_width <= near_width <= 1, got {self.far_width}, {self.near_width}")
        if abs(self.center_offset) + self.near_width / 2 > 0.5 + 1e-9:
            raise ConfigError(
                f"road does not fit: |center_offset| {abs(self.center_offset)} + near_width/2 > 0.5"
            )
        if not 0 <= self.vegetation_height < self.horizon:
            raise ConfigError(f"vegetation_height must be in [0, horizon), got {self.vegetation_height}")
        if self.noise_scale < 1 or self.noise_octaves < 1:
            raise ConfigError("noise_scale must be >= 1 and noise_octaves >= 1")
        if self.pole_count < 0 or self.texture_noise < 0 or not 0 <= self.sky_gradient <= 1:
            raise ConfigError("pole_count and texture_noise must be >= 0, sky_gradient in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticScene:
    scene_id: str
    spec: SceneSpec
    snow: InputImage
    bare: InputImage
    mask: MaskImage
    bare_mask: MaskImage
    road_pixels: int
    snow_road_pixels: int
    metadata: dict = field(default_factory=dict)

    @property
    def truth_shr(self) -> tuple[int, int]:
        return self.snow_road_pixels, self.road_pixels


def value_noise(height: int, width: int, scale: float, octaves: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of bilinearly interpolated random lattices, halving cell size per octave, in [0, 1]."""
    total = np.zeros((height, width))
    amplitude, norm = 1.0, 0.0
    cell = float(scale)
    for _ in range(octaves):
        gh = max(2, int(np.ceil(height / cell)) + 1)
        gw = max(2, int(np.ceil(width / cell)) + 1)
        lattice = rng.random((gh, gw))
        total += amplitude * resize_array(lattice, height, width)
        norm += amplitude
        amplitude *= 0.5
        cell = max(1.0, cell / 2)
    total /= norm
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


def coverage_threshold(noise: np.ndarray, region: np.ndarray, target: float) -> tuple[float, float]:
    """Bisect a threshold t so that mean(noise[region] >= t) is close to `target`.

    Returns (t, achieved fraction). Coverage 0 and 1 are exact (t = +inf / -inf).
    """
    values = noise[region]
    if values.size == 0 or target <= 0:
        return float("inf"), 0.0
    if target >= 1:
        return float("-inf"), 1.0
    lo, hi = float(values.min()), float(values.max()) + 1e-12
    best_t, best_err = hi, float("inf")
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        frac = float((values >= mid).mean())
        err = abs(frac - target)
        if err < best_err:
            best_t, best_err = mid, err
        if frac > target:
            lo = mid
        else:
            hi = mid
    return best_t, float((values >= best_t).mean())


def _jitter(spec: SceneSpec, rng: np.random.Generator) -> SceneSpec:
    horizon = float(np.clip(spec.horizon + rng.uniform(-0.04, 0.04), 0.2, 0.6))
    near = float(np.clip(spec.near_width * rng.uniform(0.9, 1.05), 0.3, 1.0))
    far = float(np.clip(spec.far_width * rng.uniform(0.8, 1.2), 0.02, near))
    room = 0.5 - near / 2
    offset = float(np.clip(spec.center_offset + rng.uniform(-0.05, 0.05), -room, room))
    veg = float(min(spec.vegetation_height, horizon * 0.5))
    return replace(spec, horizon=horizon, near_width=near, far_width=far, center_offset=offset,
                   vegetation_height=veg)


def road_region(height: int, width: int, spec: SceneSpec) -> tuple[np.ndarray, int]:
    """Boolean trapezoid mask and the horizon row."""
    hz = int(round(spec.horizon * height))
    ys = np.arange(height)[:, None]
    xs = np.arange(width)[None, :] + 0.5
    t = np.clip((ys - hz) / max(1, height - 1 - hz), 0.0, 1.0)
    half = 0.5 * width * (spec.far_width + t * (spec.near_width - spec.far_width))
    cx = width * (0.5 + spec.center_offset)
    return (ys >= hz) & (np.abs(xs - cx) <= half), hz


def _place_poles(mask: np.ndarray, road: np.ndarray, hz: int, count: int, rng: np.random.Generator) -> None:
    height, width = mask.shape
    pole_w = max(1, width // 48)
    for k in range(count):
        bottom = int(rng.integers(hz + 1, max(hz + 2, hz + (height - hz) // 2)))
        bottom = min(bottom, height - 1)
        top = max(0, hz - int(rng.integers(height // 8, height // 3 + 1)))
        span = road[top:bottom + 1].any(axis=0)
        free = np.flatnonzero(~span)
        left = k % 2 == 0
        candidates = free[free < width // 2] if left else free[free >= width // 2]
        candidates = candidates[candidates + pole_w <= width]
        candidates = [x for x in candidates if not span[x:x + pole_w].any()]
        if not candidates:
            continue
        x = int(candidates[int(rng.integers(0, len(candidates)))])
        mask[top:bottom + 1, x:x + pole_w] = SceneClass.POLE_SIGN
        plate_h = max(2, height // 24)
        plate_x0 = max(0, x - pole_w)
        mask[top:top + plate_h, plate_x0:min(width, x + 2 * pole_w)] = SceneClass.POLE_SIGN


def _render(mask: np.ndarray, hz: int, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    height, width = mask.shape
    img = np.zeros((height, width, 3))
    frac = (np.arange(height) / max(1, hz))[:, None] * spec.sky_gradient
    top, bottom = np.array(SKY_TOP, dtype=float), np.array(SKY_HORIZON, dtype=float)
    sky = top[None, None, :] * (1 - frac[..., None]) + bottom[None, None, :] * frac[..., None]
    img[:] = np.broadcast_to(sky, img.shape)
    for cls, color in BASE_COLORS.items():
        img[mask == cls] = color
    if spec.texture_noise > 0:
        img += rng.normal(0.0, spec.texture_noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_scene(spec: SceneSpec, scene_id: str = "scene") -> SyntheticScene:
    """Generate snow image, bare image and both truth masks for one spec."""
    spec.validate()
    layout_seq, texture_seq, road_seq, ground_seq, snow_tex_seq = np.random.SeedSequence(spec.seed).spawn(5)
    layout_rng = np.random.default_rng(layout_seq)
    geometry = _jitter(spec, layout_rng) if spec.jitter_geometry else spec
    h, w = spec.height, spec.width

    road, hz = road_region(h, w, geometry)
    bare_mask = np.full((h, w), SceneClass.BACKGROUND, dtype=np.uint8)
    bare_mask[:hz] = SceneClass.SKY
    veg_rows = int(round(geometry.vegetation_height * h))
    if veg_rows:
        bare_mask[max(0, hz - veg_rows):hz] = SceneClass.GREEN
    bare_mask[road] = SceneClass.ROAD
    _place_poles(bare_mask, road, hz, spec.pole_count, layout_rng)
    road = bare_mask == SceneClass.ROAD
    ground = bare_mask == SceneClass.BACKGROUND

    road_pixels = int(road.sum())
    if road_pixels == 0:
        raise GenerationError(f"scene '{scene_id}' has no road pixels; widen the road or lower the horizon")

    road_noise = value_noise(h, w, spec.noise_scale, spec.noise_octaves, np.random.default_rng(road_seq))
    t_road, achieved = coverage_threshold(road_noise, road, spec.coverage)
    if abs(achieved - spec.coverage) > COVERAGE_TOLERANCE:
        raise GenerationError(
            f"scene '{scene_id}': road coverage {achieved:.3f} cannot reach {spec.coverage:.3f} "
            f"with noise_scale {spec.noise_scale}; try a smaller noise_scale or a larger image"
        )
    ground_target = spec.coverage if spec.background_coverage is None else spec.background_coverage
    ground_noise = value_noise(h, w, spec.noise_scale, spec.noise_octaves, np.random.default_rng(ground_seq))
    t_ground, ground_achieved = coverage_threshold(ground_noise, ground, ground_target)

    snow_cover = (road & (road_noise >= t_road)) | (ground & (ground_noise >= t_ground))
    snow_mask = bare_mask.copy()
    snow_mask[snow_cover] = SceneClass.SNOW

    bare_pixels = _render(bare_mask, hz, spec, np.random.default_rng(texture_seq))
    snow_pixels = bare_pixels.copy()
    if snow_cover.any():
        snow_tex = np.random.default_rng(snow_tex_seq).normal(0.0, spec.texture_noise / 2, size=(h, w, 3))
        snow_color = np.array(BASE_COLORS[SceneClass.SNOW], dtype=float)[None, None, :] + snow_tex
        snow_pixels[snow_cover] = np.clip(np.rint(snow_color[snow_cover]), 0, 255).astype(np.uint8)

    snow_road_pixels = int((road & snow_cover).sum())
    metadata = {
        "id": scene_id,
        "seed": int(spec.seed),
        "coverage": float(spec.coverage),
        "background_coverage": float(ground_target),
        "truth_shr": [snow_road_pixels, road_pixels],
        "road_coverage": snow_road_pixels / road_pixels,
        "ground_coverage": float(ground_achieved),
        "height": h,
        "width": w,
    }
    return SyntheticScene(
        scene_id=scene_id,
        spec=spec,
        snow=InputImage(scene_id, snow_pixels),
        bare=InputImage(scene_id, bare_pixels),
        mask=MaskImage(snow_mask),
        bare_mask=MaskImage(bare_mask),
        road_pixels=road_pixels,
        snow_road_pixels=snow_road_pixels,
        metadata=metadata,
    )


def parse_coverage(value) -> float | list[float] | None:
    """None, a number, or an inclusive sweep "start:stop:step" -> list of values."""
    if value is None or isinstance(value, (int, float)):
        return None if value is None else float(value)
    text = str(value).strip()
    if ":" not in text:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"coverage must be a number or start:stop:step, got {value!r}") from exc
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"coverage sweep must be start:stop:step, got {value!r}") from exc
    if step <= 0 or stop < start:
        raise ConfigError(f"coverage sweep needs step > 0 and stop >= start, got {value!r}")
    n = int(round((stop - start) / step)) + 1
    values = [round(start + k * step, 10) for k in range(n)]
    return [v for v in values if v <= stop + 1e-9]


def scene_specs(base: SceneSpec, count: int, coverage=None, seed: int = 0) -> list[SceneSpec]:
    """Per-scene specs: seeds from one SeedSequence; coverage fixed, swept (cycled) or drawn uniformly."""
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    children = np.random.SeedSequence(seed).spawn(count)
    draw_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    specs = []
    for i, child in enumerate(children):
        if coverage is None:
            p = round(float(draw_rng.uniform(0.0, 1.0)), 2)
        elif isinstance(coverage, list):
            p = coverage[i % len(coverage)]
        else:
            p = float(coverage)
        specs.append(replace(base, coverage=p, seed=int(child.generate_state(1)[0])).validate())
    return specs


def synth_dataset(specs: Sequence[SceneSpec], prefix: str = "scene", workers: int = 1) -> list[SyntheticScene]:
    """Generate scenes on a bounded pool; results keep the order of `specs`."""
    ids = [f"{prefix}_{i:04d}" for i in range(len(specs))]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scenes = list(pool.map(synth_scene, specs, ids))
    logger.info("Generated %d synthetic scenes", len(scenes))
    return scenes
