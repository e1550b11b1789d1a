"""Finite-difference checks for every differentiable operation in gradtensor."""
import os
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
os.environ["PROJECT_ROOT"] = str(ROOT)

TOLERANCE = 1e-3
SEEDS = [0, 1, 2, 3, 4]


def _weights(shape, seed):
    return np.random.default_rng(seed + 100).normal(size=shape)


def _away_from_zero(shape, seed):
    """Values with |v| >= 0.1 so kinks of relu-type ops are not straddled by the finite-difference step."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.1, 1.0, size=shape)
    return v * rng.choice([-1.0, 1.0], size=shape)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (1, 2, 2)])
def test_conv2d(seed, stride, padding, dilation):
    from src.gradtensor import conv2d, grad_check, mul, sum
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 6, 6))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    w = _weights((2, 4) + _conv_out(6, 3, stride, padding, dilation), seed)

    def fn(x, k, b):
        return sum(mul(conv2d(x, k, b, stride=stride, padding=padding, dilation=dilation), w))

    assert grad_check(fn, [x, k, b]) < TOLERANCE


def _conv_out(size, k, stride, padding, dilation):
    from src.gradtensor import conv_output_size
    n = conv_output_size(size, k, stride, padding, dilation)
    return n, n


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_transpose(seed):
    from src.gradtensor import conv2d_transpose, grad_check, mul, sum
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 3, 4))
    k = rng.normal(size=(3, 2, 4, 4))
    b = rng.normal(size=2)
    w = _weights((2, 2, 6, 8), seed)

    def fn(x, k, b):
        return sum(mul(conv2d_transpose(x, k, b, stride=2, padding=1), w))

    assert grad_check(fn, [x, k, b]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride,dilation", [(1, 1), (2, 1), (1, 2)])
def test_depthwise_conv2d(seed, stride, dilation):
    from src.gradtensor import depthwise_conv2d, grad_check, mul, sum
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 7, 7))
    k = rng.normal(size=(3, 1, 3, 3))
    out = _conv_out(7, 3, stride, dilation, dilation)
    w = _weights((2, 3) + out, seed)

    def fn(x, k):
        return sum(mul(depthwise_conv2d(x, k, stride=stride, padding=dilation, dilation=dilation), w))

    assert grad_check(fn, [x, k]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("mode", ["batch", "instance"])
def test_norm_layer(seed, mode):
    from src.gradtensor import grad_check, mul, norm_layer, sum
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 2, 4, 4))
    gamma = rng.uniform(0.5, 1.5, size=2)
    beta = rng.normal(size=2)
    w = _weights((3, 2, 4, 4), seed)

    def fn(x, gamma, beta):
        return sum(mul(norm_layer(x, gamma, beta, mode=mode), w))

    assert grad_check(fn, [x, gamma, beta]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_norm_layer_fixed_stats(seed):
    from src.gradtensor import grad_check, mul, norm_layer, sum
    rng = np.random.default_rng(seed)
    stats = (rng.normal(size=2), rng.uniform(0.5, 2.0, size=2))
    w = _weights((2, 2, 3, 3), seed)

    def fn(x, gamma, beta):
        return sum(mul(norm_layer(x, gamma, beta, stats=stats), w))

    assert grad_check(fn, [rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), rng.normal(size=2)]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", ["relu", "leaky_relu", "tanh", "sigmoid"])
def test_activations(seed, name):
    import src.gradtensor as gt
    act = getattr(gt, name)
    x = _away_from_zero((2, 3, 4), seed)
    w = _weights((2, 3, 4), seed)

    def fn(x):
        return gt.sum(gt.mul(act(x), w))

    assert gt.grad_check(fn, [x]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_bilinear_upsample_and_pooling(seed):
    from src.gradtensor import bilinear_upsample, global_avg_pool, grad_check, mul, sum
    x = np.random.default_rng(seed).normal(size=(1, 2, 3, 5))
    w = _weights((1, 2, 6, 10), seed)
    v = _weights((1, 2, 1, 1), seed + 7)

    def fn(x):
        return sum(mul(bilinear_upsample(x, 2), w)) + sum(mul(global_avg_pool(x), v))

    assert grad_check(fn, [x]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_shape_ops(seed):
    from src.gradtensor import broadcast_to, concat, div, grad_check, mean, mul, reshape, sub, sum
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(1, 2, 3, 3))
    b = rng.normal(size=(1, 3, 3, 3))
    c = rng.uniform(1.0, 2.0, size=(1, 1, 1, 1))
    w = _weights((1, 5, 3, 3), seed)

    def fn(a, b, c):
        joined = concat([a, b], axis=1)
        scaled = div(sub(joined, broadcast_to(c, (1, 5, 3, 3))), c)
        return sum(mul(reshape(scaled, (5, 9)), reshape(w_t, (5, 9)))) + mean(a)

    from src.gradtensor import Tensor
    w_t = Tensor(w, dtype=np.float64)
    assert grad_check(fn, [a, b, c]) < TOLERANCE


@pytest.mark.parametrize("seed", SEEDS)
def test_losses(seed):
    from src.gradtensor import bce_with_logits, grad_check, l1_loss, softmax_cross_entropy
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(2, 4, 3, 3))
    labels = rng.integers(0, 4, size=(2, 3, 3))
    labels[0, 0, 0] = 255
    target = rng.uniform(size=(2, 1, 3, 3))
    pred = target + _away_from_zero((2, 1, 3, 3), seed) * 0.5

    assert grad_check(lambda z: softmax_cross_entropy(z, labels), [logits]) < TOLERANCE
    assert grad_check(lambda z: bce_with_logits(z, target), [rng.normal(size=(2, 1, 3, 3))]) < TOLERANCE
    assert grad_check(lambda p: l1_loss(p, target), [pred]) < TOLERANCE


def test_grad_check_flags_a_wrong_rule():
    from src.gradtensor import Tensor, grad_check
    from src.gradtensor.tensor import make_result

    def bad_square(x: Tensor) -> Tensor:
        # Deliberately wrong backward: d(x^2)/dx reported as x instead of 2x.
        return make_result("bad", (x,), (x.data ** 2).sum(), lambda g: (g * x.data,))

    assert grad_check(bad_square, [np.array([1.0, 2.0, 3.0])]) > 0.1


def test_grad_check_needs_scalar():
    from src.gradtensor import grad_check, mul
    from src.utils.errors import ContractError
    with pytest.raises(ContractError):
        grad_check(lambda x: mul(x, 2.0), [np.ones(3)])
