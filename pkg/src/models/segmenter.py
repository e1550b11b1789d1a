"""
Segmenter: DeepLabv3+-lite for six road-scene classes.

Backbone (MobileNet-style, output stride 8):
    stem     conv 3x3/2 -> BN -> relu                                  1/2
    block1   depthwise 3x3/1 + pointwise, 24 channels (low-level skip)  1/2
    block2   depthwise 3x3/2 + pointwise, 32 channels                   1/4
    block3   depthwise 3x3/2 + pointwise, 64 channels                   1/8
    block4   depthwise 3x3/1 dilation 2 + pointwise, 64 channels         1/8
ASPP: one branch per rate (1x1 conv for rate 1, 3x3 atrous conv otherwise) plus an optional
global-pooling branch, concatenated and projected with a 1x1 conv.
Decoder: upsample x4, fuse a 1x1-reduced low-level feature, 3x3 conv, 1x1 classifier, upsample x2.

Batch norm keeps running statistics (buffers) that inference uses, so a mask never
depends on the rest of its batch. Argmax ties resolve to the lowest class index.
"""
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from src.gradtensor import (
    Adam,
    Tape,
    Tensor,
    backward,
    bilinear_upsample,
    broadcast_to,
    concat,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    no_record,
    norm_layer,
    relu,
    softmax_cross_entropy,
)
from src.models.layers import Network, ParamBuilder, plain_float
from src.pipeline.checkpoint import join_prefixed, load_checkpoint, load_sidecar, save_checkpoint, split_prefixed
from src.pipeline.metrics import ConfusionMatrix, accumulate, mean_iou
from src.pipeline.samples import CLASS_NAMES, AnnotatedSample, InputImage, MaskImage
from src.pipeline.transform import assemble_crops, images_to_batch, resize, resize_mask, tile_crops
from src.utils.config import build_dataclass
from src.utils.errors import ConfigError, FormatError, InputError, UndefinedMetricError
from src.utils.logger import module_logger

logger = module_logger(__name__)

CHECKPOINT_KIND = "segmenter"
OUTPUT_STRIDE = 8

# (name, out channels, stride, dilation)
BACKBONE_BLOCKS = (
    ("block1", 24, 1, 1),
    ("block2", 32, 2, 1),
    ("block3", 64, 2, 1),
    ("block4", 64, 1, 2),
)
STEM_CHANNELS = 16
ASPP_CHANNELS = 32
LOW_LEVEL_CHANNELS = 8
DECODER_CHANNELS = 32


@dataclass
class SegmenterConfig:
    num_classes: int = 6
    class_names: list = field(default_factory=lambda: list(CLASS_NAMES))
    input_size: int = 96
    width_multiplier: float = 1.0
    aspp_rates: list = field(default_factory=lambda: [1, 2, 4, 6])
    aspp_global_pool: bool = True
    bn_momentum: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    tiles: dict | None = None
    include_bare: bool = True
    seed: int = 2

    @classmethod
    def from_dict(cls, values: dict | None) -> "SegmenterConfig":
        return build_dataclass(cls, values, "segmenter")

    def validate(self) -> "SegmenterConfig":
        self.class_names = [str(n) for n in self.class_names]
        self.aspp_rates = [int(r) for r in self.aspp_rates]
        if self.num_classes != len(self.class_names):
            raise ConfigError(f"num_classes {self.num_classes} != {len(self.class_names)} class names")
        if not self.aspp_rates or self.aspp_rates[0] != 1:
            raise ConfigError(f"aspp_rates must start with 1, got {self.aspp_rates}")
        if any(b <= a for a, b in zip(self.aspp_rates, self.aspp_rates[1:])):
            raise ConfigError(f"aspp_rates must be strictly increasing, got {self.aspp_rates}")
        if self.input_size < OUTPUT_STRIDE or self.input_size % OUTPUT_STRIDE:
            raise ConfigError(f"input_size must be a positive multiple of {OUTPUT_STRIDE}, got {self.input_size}")
        if self.width_multiplier <= 0:
            raise ConfigError(f"width_multiplier must be > 0, got {self.width_multiplier}")
        if not 0 < self.bn_momentum <= 1:
            raise ConfigError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if self.tiles is not None:
            if not isinstance(self.tiles, dict) or set(self.tiles) != {"rows", "cols"}:
                raise ConfigError(f"tiles must be null or {{rows, cols}}, got {self.tiles}")
            self.tiles = {"rows": int(self.tiles["rows"]), "cols": int(self.tiles["cols"])}
            if self.tiles["rows"] < 1 or self.tiles["cols"] < 1:
                raise ConfigError(f"tiles rows/cols must be >= 1, got {self.tiles}")
        return self

    def channels(self, base: int) -> int:
        return max(4, int(round(base * self.width_multiplier)))

    def to_dict(self) -> dict:
        return asdict(self)


class _BatchNorm:
    """Batch norm over named parameters and running buffers."""

    def __init__(self, params: dict, buffers: dict, momentum: float):
        self.params = params
        self.buffers = buffers
        self.momentum = momentum

    def __call__(self, x: Tensor, name: str, training: bool) -> Tensor:
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        mean_key, var_key = f"{name}.running_mean", f"{name}.running_var"
        if not training:
            return norm_layer(x, gamma, beta, mode="batch", stats=(self.buffers[mean_key], self.buffers[var_key]))
        m = self.momentum
        batch_mean = x.data.mean(axis=(0, 2, 3))
        batch_var = x.data.var(axis=(0, 2, 3))
        self.buffers[mean_key] = ((1 - m) * self.buffers[mean_key] + m * batch_mean).astype(np.float32)
        self.buffers[var_key] = ((1 - m) * self.buffers[var_key] + m * batch_var).astype(np.float32)
        return norm_layer(x, gamma, beta, mode="batch")


def aspp_forward(
    x: Tensor,
    params: dict,
    bn: _BatchNorm,
    rates: Sequence[int],
    global_pool: bool,
    training: bool = False,
) -> Tensor:
    branches = []
    for rate in rates:
        name = f"aspp.rate{rate}"
        if rate == 1:
            h = conv2d(x, params[f"{name}.weight"])
        else:
            h = conv2d(x, params[f"{name}.weight"], padding=rate, dilation=rate)
        branches.append(relu(bn(h, f"{name}.bn", training)))
    if global_pool:
        pooled = relu(conv2d(global_avg_pool(x), params["aspp.pool.weight"], params["aspp.pool.bias"]))
        branches.append(broadcast_to(pooled, (x.shape[0], pooled.shape[1], x.shape[2], x.shape[3])))
    fused = branches[0] if len(branches) == 1 else concat(branches, axis=1)
    return relu(bn(conv2d(fused, params["aspp.project.weight"]), "aspp.project.bn", training))


def build_segmenter(config: SegmenterConfig, rng: np.random.Generator | None = None) -> Network:
    config.validate()
    pb = ParamBuilder(rng if rng is not None else np.random.default_rng(0), init="he")
    ch = config.channels

    pb.conv("stem", ch(STEM_CHANNELS), 3, 3, bias=False)
    pb.norm("stem.bn", ch(STEM_CHANNELS), running=True)
    in_ch = ch(STEM_CHANNELS)
    for name, out, _, _ in BACKBONE_BLOCKS:
        pb.depthwise(f"{name}.dw", in_ch, 3)
        pb.norm(f"{name}.dw.bn", in_ch, running=True)
        pb.conv(f"{name}.pw", ch(out), in_ch, 1, bias=False)
        pb.norm(f"{name}.pw.bn", ch(out), running=True)
        in_ch = ch(out)
    low_ch = ch(BACKBONE_BLOCKS[0][1])

    aspp_ch = ch(ASPP_CHANNELS)
    for rate in config.aspp_rates:
        pb.conv(f"aspp.rate{rate}", aspp_ch, in_ch, 1 if rate == 1 else 3, bias=False)
        pb.norm(f"aspp.rate{rate}.bn", aspp_ch, running=True)
    n_branches = len(config.aspp_rates)
    if config.aspp_global_pool:
        pb.conv("aspp.pool", aspp_ch, in_ch, 1)
        n_branches += 1
    pb.conv("aspp.project", aspp_ch, aspp_ch * n_branches, 1, bias=False)
    pb.norm("aspp.project.bn", aspp_ch, running=True)

    reduced = ch(LOW_LEVEL_CHANNELS)
    pb.conv("decoder.low", reduced, low_ch, 1, bias=False)
    pb.norm("decoder.low.bn", reduced, running=True)
    pb.conv("decoder.fuse", ch(DECODER_CHANNELS), aspp_ch + reduced, 3, bias=False)
    pb.norm("decoder.fuse.bn", ch(DECODER_CHANNELS), running=True)
    pb.conv("classifier", config.num_classes, ch(DECODER_CHANNELS), 1)

    params, buffers = pb.params, pb.buffers
    bn = _BatchNorm(params, buffers, config.bn_momentum)

    def forward(x: Tensor, training: bool = False, rng=None, taps=None) -> Tensor:
        h = relu(bn(conv2d(x, params["stem.weight"], stride=2, padding=1), "stem.bn", training))
        low = None
        for name, _, stride, dilation in BACKBONE_BLOCKS:
            h = depthwise_conv2d(h, params[f"{name}.dw.weight"], stride=stride, padding=dilation, dilation=dilation)
            h = relu(bn(h, f"{name}.dw.bn", training))
            h = relu(bn(conv2d(h, params[f"{name}.pw.weight"]), f"{name}.pw.bn", training))
            if low is None:
                low = h
        context = aspp_forward(h, params, bn, config.aspp_rates, config.aspp_global_pool, training)
        if taps is not None:
            taps.update(low_level=low, backbone=h, aspp=context)

        up = bilinear_upsample(context, 4)
        skip = relu(bn(conv2d(low, params["decoder.low.weight"]), "decoder.low.bn", training))
        fused = conv2d(concat([up, skip], axis=1), params["decoder.fuse.weight"], padding=1)
        fused = relu(bn(fused, "decoder.fuse.bn", training))
        logits = conv2d(fused, params["classifier.weight"], params["classifier.bias"])
        return bilinear_upsample(logits, 2)

    return Network(params, forward, buffers)


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the class axis; np.argmax returns the first maximum."""
    return np.argmax(logits, axis=1).astype(np.uint8)


@dataclass(eq=False)
class SegmenterCheckpoint:
    config: SegmenterConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @cached_property
    def network(self) -> Network:
        net = build_segmenter(self.config)
        net.load_state(self.params, self.buffers)
        return net

    def segment_image(self, image: InputImage) -> MaskImage:
        """Segment an image of any size; the mask is returned at the image's size.

        With tiles configured the frame is resized to rows*size x cols*size, segmented
        crop by crop and reassembled before the nearest-neighbour resize back.
        """
        size = self.config.input_size
        tiles = self.config.tiles
        if not tiles:
            mask = segment(self, resize(image, size, size))
        else:
            rows, cols = tiles["rows"], tiles["cols"]
            frame = resize(image, rows * size, cols * size)
            crops = [
                segment(self, InputImage(f"{image.image_id}_{k}", crop)).values
                for k, crop in enumerate(tile_crops(frame.pixels, rows, cols, size))
            ]
            mask = MaskImage(assemble_crops(crops, rows, cols), num_classes=self.config.num_classes)
        return resize_mask(mask, image.height, image.width)

    def tensors(self) -> dict[str, np.ndarray]:
        return join_prefixed(S=self.params, B=self.buffers)

    def save(self, path: str | Path) -> Path:
        sidecar = {"kind": CHECKPOINT_KIND, "config": self.config.to_dict(), "metadata": self.metadata}
        return save_checkpoint(path, self.tensors(), sidecar)

    @classmethod
    def load(cls, path: str | Path) -> "SegmenterCheckpoint":
        sidecar = load_sidecar(path)
        if sidecar.get("kind") != CHECKPOINT_KIND:
            raise FormatError(f"{path} holds a '{sidecar.get('kind')}' checkpoint, expected '{CHECKPOINT_KIND}'")
        tensors = load_checkpoint(path)
        ckpt = cls(
            SegmenterConfig.from_dict(sidecar.get("config")),
            split_prefixed(tensors, "S."),
            split_prefixed(tensors, "B."),
            sidecar.get("metadata") or {},
        )
        build_segmenter(ckpt.config).load_state(ckpt.params, ckpt.buffers)
        return ckpt


def segment(ckpt: SegmenterCheckpoint, image: InputImage) -> MaskImage:
    """S(I) at the configured square input size."""
    size = ckpt.config.input_size
    if (image.height, image.width) != (size, size):
        raise InputError(f"image '{image.image_id}' is {image.height}x{image.width}, segmenter expects {size}x{size}")
    with no_record():
        logits = ckpt.network(Tensor(images_to_batch([image])), training=False)
    return MaskImage(predict_labels(logits.data)[0], num_classes=ckpt.config.num_classes)


def _evaluate(net: Network, samples: Sequence[AnnotatedSample], num_classes: int, batch_size: int) -> ConfusionMatrix:
    cm = ConfusionMatrix.empty(num_classes)
    with no_record():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            logits = net(Tensor(images_to_batch([s.image for s in chunk])), training=False)
            for sample, labels in zip(chunk, predict_labels(logits.data)):
                cm = accumulate(cm, MaskImage(labels, num_classes=num_classes), sample.mask)
    return cm


def _check_samples(samples: Sequence[AnnotatedSample], size: int, what: str) -> None:
    for s in samples:
        if (s.image.height, s.image.width) != (size, size):
            raise InputError(
                f"{what} sample '{s.sample_id}' is {s.image.height}x{s.image.width}, expected {size}x{size}; "
                "use prepare_segmenter_samples first"
            )


def train_segmenter(
    samples: Sequence[AnnotatedSample],
    config: SegmenterConfig,
    seed: int | None = None,
    validation: Sequence[AnnotatedSample] | None = None,
) -> tuple[SegmenterCheckpoint, pd.DataFrame]:
    """Minimize per-pixel softmax cross-entropy with Adam.

    Samples must already be input_size x input_size. The history holds one row per
    epoch (epoch, loss, val_miou); val_miou is NaN without validation samples.
    """
    config.validate()
    if not samples:
        raise InputError("segmenter training needs at least one annotated sample")
    _check_samples(samples, config.input_size, "training")
    if validation:
        _check_samples(validation, config.input_size, "validation")
    seed = config.seed if seed is None else seed

    init_seq, order_seq = np.random.SeedSequence(seed).spawn(2)
    net = build_segmenter(config, np.random.default_rng(init_seq))
    order_rng = np.random.default_rng(order_seq)
    opt = Adam(net.params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    images = images_to_batch([s.image for s in samples])
    labels = np.stack([s.mask.values for s in samples]).astype(np.int64)

    logger.info(
        "Segmenter training: %d samples at %dx%d, %d epochs, batch %d, lr=%g, seed=%d",
        len(samples), config.input_size, config.input_size, config.epochs, config.batch_size, config.lr, seed,
    )
    rows = []
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                logits = net(Tensor(images[idx]), training=True)
                loss = softmax_cross_entropy(logits, labels[idx])
            opt.zero_grad()
            backward(loss, tape)
            opt.step()
            losses.append(loss.item())

        val_miou = float("nan")
        if validation:
            try:
                val_miou = mean_iou(_evaluate(net, validation, config.num_classes, config.batch_size))
            except UndefinedMetricError:
                logger.warning("Epoch %d: validation mIoU undefined", epoch)
        rows.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_miou": val_miou})
        logger.info("Epoch %d/%d: loss=%.4f val_miou=%.4f", epoch, config.epochs, rows[-1]["loss"], val_miou)

    history = pd.DataFrame(rows, columns=["epoch", "loss", "val_miou"])
    last = rows[-1] if rows else {}
    metadata = {
        "epochs_completed": config.epochs,
        "seed": int(seed),
        "train_samples": len(samples),
        "validation_samples": len(validation or []),
        "final_loss": plain_float(last.get("loss")),
        "final_val_miou": plain_float(last.get("val_miou")),
    }
    ckpt = SegmenterCheckpoint(config, net.state(), net.buffer_state(), metadata)
    return ckpt, history


def evaluate_segmenter(ckpt: SegmenterCheckpoint, samples: Sequence[AnnotatedSample]) -> ConfusionMatrix:
    """Confusion matrix of S on annotated frames of any size (masks compared at frame size)."""
    cm = ConfusionMatrix.empty(ckpt.config.num_classes)
    for sample in samples:
        cm = accumulate(cm, ckpt.segment_image(sample.image), sample.mask)
    return cm
