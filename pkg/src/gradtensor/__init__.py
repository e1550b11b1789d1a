"""Minimal reverse-mode autodiff over numpy, NCHW layout."""
from src.gradtensor.tensor import Tape, Tensor, backward, current_tape, no_record
from src.gradtensor.ops import add, broadcast_to, concat, div, mean, mul, neg, reshape, sub, sum
from src.gradtensor.conv import (
    conv2d,
    conv2d_transpose,
    conv_output_size,
    conv_transpose_output_size,
    depthwise_conv2d,
)
from src.gradtensor.nn import (
    bilinear_upsample,
    dropout,
    global_avg_pool,
    interpolation_matrix,
    leaky_relu,
    norm_layer,
    relu,
    resize_bilinear,
    sigmoid,
    tanh,
)
from src.gradtensor.losses import bce_with_logits, l1_loss, softmax_cross_entropy
from src.gradtensor.optim import Adam, AdamState, adam_step
from src.gradtensor.gradcheck import grad_check

__all__ = [
    "Tape", "Tensor", "backward", "current_tape", "no_record",
    "add", "broadcast_to", "concat", "div", "mean", "mul", "neg", "reshape", "sub", "sum",
    "conv2d", "conv2d_transpose", "conv_output_size", "conv_transpose_output_size", "depthwise_conv2d",
    "bilinear_upsample", "dropout", "global_avg_pool", "interpolation_matrix", "leaky_relu",
    "norm_layer", "relu", "resize_bilinear", "sigmoid", "tanh",
    "bce_with_logits", "l1_loss", "softmax_cross_entropy",
    "Adam", "AdamState", "adam_step", "grad_check",
]
