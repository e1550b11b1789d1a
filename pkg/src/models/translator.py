"""
Translator: pix2pix conditional GAN mapping a snow-covered road image to a bare-road image.

Generator (U-Net, depth D, base channels c):
    enc0      conv 4x4/2 (3 -> c), no norm
    enc i     leaky_relu(0.2) -> conv 4x4/2 -> instance norm (none on the innermost stage)
    dec i     relu -> conv_transpose 4x4/2 -> instance norm -> dropout (innermost stages,
              training only) -> concat with the mirrored encoder output
    out       relu -> conv_transpose 4x4/2 -> 3 channels -> tanh
Stage i has c * 2**min(i, 3) channels; the bottleneck is H / 2**D x W / 2**D.

Discriminator (PatchGAN) on the 6-channel (condition, candidate) stack:
    conv 4x4/2 -> leaky, then two conv 4x4/2 -> instance norm -> leaky, then a 4x4/1 pad-1 head
    emitting one logit channel of size (H/8 - 1) x (W/8 - 1).

Images cross the network boundary in [-1, 1]; stored rasters are [0, 1].
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
    bce_with_logits,
    concat,
    conv2d,
    conv2d_transpose,
    dropout,
    l1_loss,
    leaky_relu,
    no_record,
    norm_layer,
    relu,
    tanh,
)
from src.models.layers import Network, ParamBuilder, plain_float
from src.pipeline.checkpoint import join_prefixed, load_checkpoint, load_sidecar, save_checkpoint, split_prefixed
from src.pipeline.samples import FakeRoadImage, InputImage, PairedSample
from src.pipeline.transform import from_network_range, images_to_batch, resize, resize_fake
from src.utils.config import build_dataclass
from src.utils.errors import ConfigError, FormatError, InputError
from src.utils.logger import module_logger

logger = module_logger(__name__)

CHECKPOINT_KIND = "translator"


@dataclass
class TranslatorConfig:
    height: int = 64
    width: int = 96
    base_channels: int = 16
    unet_depth: int = 4
    lambda_l1: float = 100.0
    dropout: float = 0.5
    dropout_stages: int = 1
    epochs: int = 10
    batch_size: int = 4
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 1

    @classmethod
    def from_dict(cls, values: dict | None) -> "TranslatorConfig":
        return build_dataclass(cls, values, "translator")

    def validate(self) -> "TranslatorConfig":
        if self.unet_depth < 1:
            raise ConfigError(f"unet_depth must be >= 1, got {self.unet_depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        step = 2 ** self.unet_depth
        if self.height % step or self.width % step:
            raise ConfigError(
                f"input {self.height}x{self.width} is not divisible by 2**unet_depth = {step}"
            )
        if self.height < 16 or self.width < 16:
            raise ConfigError(f"input {self.height}x{self.width} is too small for the discriminator (min 16)")
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        return self

    def stage_channels(self, i: int) -> int:
        return self.base_channels * 2 ** min(i, 3)

    def to_dict(self) -> dict:
        return asdict(self)


def build_generator(config: TranslatorConfig, rng: np.random.Generator | None = None) -> Network:
    config.validate()
    pb = ParamBuilder(rng if rng is not None else np.random.default_rng(0))
    depth = config.unet_depth
    ch = config.stage_channels

    pb.conv("enc0.conv", ch(0), 3, 4)
    for i in range(1, depth):
        pb.conv(f"enc{i}.conv", ch(i), ch(i - 1), 4)
        if i < depth - 1:
            pb.norm(f"enc{i}.norm", ch(i))
    for i in range(depth - 1, 0, -1):
        in_ch = ch(i) if i == depth - 1 else 2 * ch(i)
        pb.conv_transpose(f"dec{i}.conv", in_ch, ch(i - 1), 4)
        pb.norm(f"dec{i}.norm", ch(i - 1))
    pb.conv_transpose("out.conv", 2 * ch(0) if depth > 1 else ch(0), 3, 4)
    params = pb.params

    def forward(x: Tensor, training: bool = False, rng=None, taps=None) -> Tensor:
        skips = [conv2d(x, params["enc0.conv.weight"], params["enc0.conv.bias"], stride=2, padding=1)]
        for i in range(1, depth):
            h = conv2d(leaky_relu(skips[-1], 0.2), params[f"enc{i}.conv.weight"], params[f"enc{i}.conv.bias"],
                       stride=2, padding=1)
            if i < depth - 1:
                h = norm_layer(h, params[f"enc{i}.norm.gamma"], params[f"enc{i}.norm.beta"], mode="instance")
            skips.append(h)
        if taps is not None:
            taps["bottleneck"] = skips[-1]

        d = skips[-1]
        for stage, i in enumerate(range(depth - 1, 0, -1)):
            d = conv2d_transpose(relu(d), params[f"dec{i}.conv.weight"], params[f"dec{i}.conv.bias"],
                                 stride=2, padding=1)
            d = norm_layer(d, params[f"dec{i}.norm.gamma"], params[f"dec{i}.norm.beta"], mode="instance")
            if stage < config.dropout_stages:
                d = dropout(d, config.dropout, rng, training)
            d = concat([d, skips[i - 1]], axis=1)
        out = conv2d_transpose(relu(d), params["out.conv.weight"], params["out.conv.bias"], stride=2, padding=1)
        return tanh(out)

    return Network(params, forward)


def build_discriminator(config: TranslatorConfig, rng: np.random.Generator | None = None) -> Network:
    config.validate()
    pb = ParamBuilder(rng if rng is not None else np.random.default_rng(1))
    c = config.base_channels
    pb.conv("d0.conv", c, 6, 4)
    pb.conv("d1.conv", 2 * c, c, 4)
    pb.norm("d1.norm", 2 * c)
    pb.conv("d2.conv", 4 * c, 2 * c, 4)
    pb.norm("d2.norm", 4 * c)
    pb.conv("head.conv", 1, 4 * c, 4)
    params = pb.params

    def forward(x: Tensor, training: bool = False, rng=None, taps=None) -> Tensor:
        h = leaky_relu(conv2d(x, params["d0.conv.weight"], params["d0.conv.bias"], stride=2, padding=1), 0.2)
        for i in (1, 2):
            h = conv2d(h, params[f"d{i}.conv.weight"], params[f"d{i}.conv.bias"], stride=2, padding=1)
            h = leaky_relu(norm_layer(h, params[f"d{i}.norm.gamma"], params[f"d{i}.norm.beta"], mode="instance"), 0.2)
        return conv2d(h, params["head.conv.weight"], params["head.conv.bias"], stride=1, padding=1)

    return Network(params, forward)


def patch_grid_size(height: int, width: int) -> tuple[int, int]:
    return height // 8 - 1, width // 8 - 1


def discriminate(disc: Network, condition: Tensor, candidate: Tensor) -> Tensor:
    return disc(concat([condition, candidate], axis=1))


@dataclass(eq=False)
class TranslatorCheckpoint:
    config: TranslatorConfig
    generator: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @cached_property
    def network(self) -> Network:
        net = build_generator(self.config)
        net.load_state(self.generator)
        return net

    def translate_image(self, image: InputImage) -> FakeRoadImage:
        """Translate an image of any size: resize to the network input and back."""
        sized = resize(image, self.config.height, self.config.width)
        fake = translate(self, sized)
        return resize_fake(fake, image.height, image.width)

    def tensors(self) -> dict[str, np.ndarray]:
        return join_prefixed(G=self.generator, D=self.discriminator)

    def save(self, path: str | Path) -> Path:
        sidecar = {"kind": CHECKPOINT_KIND, "config": self.config.to_dict(), "metadata": self.metadata}
        return save_checkpoint(path, self.tensors(), sidecar)

    @classmethod
    def load(cls, path: str | Path) -> "TranslatorCheckpoint":
        sidecar = load_sidecar(path)
        if sidecar.get("kind") != CHECKPOINT_KIND:
            raise FormatError(f"{path} holds a '{sidecar.get('kind')}' checkpoint, expected '{CHECKPOINT_KIND}'")
        tensors = load_checkpoint(path)
        ckpt = cls(
            TranslatorConfig.from_dict(sidecar.get("config")),
            split_prefixed(tensors, "G."),
            split_prefixed(tensors, "D."),
            sidecar.get("metadata") or {},
        )
        # Fails with FormatError when names or shapes disagree with the config.
        build_generator(ckpt.config).load_state(ckpt.generator)
        build_discriminator(ckpt.config).load_state(ckpt.discriminator)
        return ckpt


def translate(ckpt: TranslatorCheckpoint, image: InputImage) -> FakeRoadImage:
    """T(I) -> F at the configured network size; deterministic (dropout off)."""
    if (image.height, image.width) != (ckpt.config.height, ckpt.config.width):
        raise InputError(
            f"image '{image.image_id}' is {image.height}x{image.width}, "
            f"translator expects {ckpt.config.height}x{ckpt.config.width}"
        )
    with no_record():
        out = ckpt.network(Tensor(images_to_batch([image])), training=False)
    return FakeRoadImage(image.image_id, from_network_range(out.data[0]))


def _l1_on(gen: Network, snow: np.ndarray, bare: np.ndarray, batch_size: int) -> float:
    total = 0.0
    with no_record():
        for start in range(0, len(snow), batch_size):
            x, y = snow[start:start + batch_size], bare[start:start + batch_size]
            total += l1_loss(gen(Tensor(x), training=False), Tensor(y)).item() * len(x)
    return total / len(snow)


def _check_pairs(pairs: Sequence[PairedSample], config: TranslatorConfig, what: str) -> None:
    for pair in pairs:
        if (pair.snow.height, pair.snow.width) != (config.height, config.width):
            raise InputError(
                f"{what} pair '{pair.sample_id}' is {pair.snow.height}x{pair.snow.width}, "
                f"expected {config.height}x{config.width}; resize before training"
            )


def train_translator(
    pairs: Sequence[PairedSample],
    config: TranslatorConfig,
    seed: int | None = None,
    validation: Sequence[PairedSample] | None = None,
) -> tuple[TranslatorCheckpoint, pd.DataFrame]:
    """Alternate discriminator and generator Adam updates per mini-batch.

    D minimizes 0.5 * (bce(D(x, y), 1) + bce(D(x, G(x)), 0)); G minimizes
    bce(D(x, G(x)), 1) + lambda_l1 * |G(x) - y|. Returns the checkpoint and a per-epoch
    history (epoch, d_loss, g_adv, g_l1, g_loss, val_l1).
    """
    config.validate()
    if not pairs:
        raise InputError("translator training needs at least one paired sample")
    _check_pairs(pairs, config, "training")
    if validation:
        _check_pairs(validation, config, "validation")
    seed = config.seed if seed is None else seed

    g_seq, d_seq, order_seq, drop_seq = np.random.SeedSequence(seed).spawn(4)
    gen = build_generator(config, np.random.default_rng(g_seq))
    disc = build_discriminator(config, np.random.default_rng(d_seq))
    order_rng = np.random.default_rng(order_seq)
    drop_rng = np.random.default_rng(drop_seq)
    opt_g = Adam(gen.params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = Adam(disc.params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    snow = images_to_batch([p.snow for p in pairs])
    bare = images_to_batch([p.bare for p in pairs])
    val_snow = images_to_batch([p.snow for p in validation]) if validation else None
    val_bare = images_to_batch([p.bare for p in validation]) if validation else None
    initial_val = _l1_on(gen, val_snow, val_bare, config.batch_size) if validation else float("nan")

    logger.info(
        "Translator training: %d pairs, %d epochs, batch %d, lambda_l1=%g, seed=%d",
        len(pairs), config.epochs, config.batch_size, config.lambda_l1, seed,
    )
    rows = []
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(pairs))
        sums = np.zeros(4)
        batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = Tensor(snow[idx]), Tensor(bare[idx])

            with Tape() as g_tape:
                fake = gen(x, training=True, rng=drop_rng)

            with Tape() as d_tape:
                real_logits = discriminate(disc, x, y)
                fake_logits = discriminate(disc, x, fake.detach())
                d_loss = (bce_with_logits(real_logits, 1.0) + bce_with_logits(fake_logits, 0.0)) * 0.5
            opt_d.zero_grad()
            backward(d_loss, d_tape)
            opt_d.step()

            with g_tape:
                g_adv = bce_with_logits(discriminate(disc, x, fake), 1.0)
                g_l1 = l1_loss(fake, y)
                g_loss = g_adv + g_l1 * config.lambda_l1
            opt_g.zero_grad()
            backward(g_loss, g_tape)
            opt_g.step()
            opt_d.zero_grad()

            sums += (d_loss.item(), g_adv.item(), g_l1.item(), g_loss.item())
            batches += 1

        d_mean, adv_mean, l1_mean, g_mean = sums / batches
        val_l1 = _l1_on(gen, val_snow, val_bare, config.batch_size) if validation else float("nan")
        rows.append({"epoch": epoch, "d_loss": d_mean, "g_adv": adv_mean, "g_l1": l1_mean,
                     "g_loss": g_mean, "val_l1": val_l1})
        logger.info(
            "Epoch %d/%d: d_loss=%.4f g_adv=%.4f g_l1=%.4f g_loss=%.4f val_l1=%.4f",
            epoch, config.epochs, d_mean, adv_mean, l1_mean, g_mean, val_l1,
        )

    history = pd.DataFrame(rows, columns=["epoch", "d_loss", "g_adv", "g_l1", "g_loss", "val_l1"])
    last = rows[-1] if rows else {}
    metadata = {
        "epochs_completed": config.epochs,
        "seed": int(seed),
        "train_pairs": len(pairs),
        "validation_pairs": len(validation or []),
        "initial_val_l1": plain_float(initial_val),
        "final_d_loss": plain_float(last.get("d_loss")),
        "final_g_loss": plain_float(last.get("g_loss")),
        "final_g_l1": plain_float(last.get("g_l1")),
        "final_val_l1": plain_float(last.get("val_l1")),
    }
    ckpt = TranslatorCheckpoint(config, gen.state(), disc.state(), metadata)
    return ckpt, history
