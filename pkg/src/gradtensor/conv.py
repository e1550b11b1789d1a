"""
Convolutions over NCHW tensors: dense, transposed and depthwise.

Shape formula (dense and depthwise), with symmetric zero padding:

    out = floor((size + 2*padding - dilation*(k - 1) - 1) / stride) + 1

Transposed convolution inverts it (dilation 1):

    out = (size - 1)*stride - 2*padding + k

Kernels are OIHW for conv2d, (in, out, kH, kW) for conv2d_transpose and (C, 1, kH, kW)
for depthwise_conv2d. Windows are strided views (im2col without the copy until the
contraction needs it).
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

from src.gradtensor.tensor import Tensor, make_result
from src.utils.errors import ContractError, DimensionError


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _check_hyper(stride: int, padding: int, dilation: int = 1) -> None:
    if stride < 1 or dilation < 1 or padding < 0:
        raise ContractError(f"invalid stride={stride}, padding={padding}, dilation={dilation}")


def _check_rank(x: Tensor, kernel: Tensor) -> None:
    if x.ndim != 4:
        raise DimensionError(f"input must be NCHW, got rank {x.ndim}", axis="rank")
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be 4-D, got rank {kernel.ndim}", axis="rank")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: np.ndarray, kh: int, kw: int, oh: int, ow: int, stride: int, dilation: int) -> np.ndarray:
    """Read-only view of shape (N, C, OH, OW, kH, kW)."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh * dilation, sw * dilation),
        writeable=False,
    )


def _tap(i: int, j: int, oh: int, ow: int, stride: int, dilation: int) -> tuple[slice, slice, slice, slice]:
    """Index of the padded-input positions touched by kernel tap (i, j)."""
    return (
        slice(None),
        slice(None),
        slice(i * dilation, i * dilation + stride * (oh - 1) + 1, stride),
        slice(j * dilation, j * dilation + stride * (ow - 1) + 1, stride),
    )


def _output_dims(h: int, w: int, kh: int, kw: int, stride: int, padding: int, dilation: int) -> tuple[int, int]:
    oh = conv_output_size(h, kh, stride, padding, dilation)
    ow = conv_output_size(w, kw, stride, padding, dilation)
    if oh < 1:
        raise DimensionError(f"output height {oh} < 1 for input height {h}", axis="height")
    if ow < 1:
        raise DimensionError(f"output width {ow} < 1 for input width {w}", axis="width")
    return oh, ow


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, stride: int, padding: int, dilation: int) -> np.ndarray:
    _, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    oh, ow = _output_dims(h, w, kh, kw, stride, padding, dilation)
    win = _windows(_pad(x, padding), kh, kw, oh, ow, stride, dilation)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2)


def conv2d_input_grad(
    g: np.ndarray, kernel: np.ndarray, x_shape: tuple[int, ...], stride: int, padding: int, dilation: int
) -> np.ndarray:
    """Scatter (col2im) of output gradients back onto the input grid."""
    n, c, h, w = x_shape
    _, _, kh, kw = kernel.shape
    oh, ow = g.shape[2:]
    dtype = np.result_type(g.dtype, kernel.dtype)
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, kernel[:, :, i, j], axes=([1], [0]))
            gxp[_tap(i, j, oh, ow, stride, dilation)] += contrib.transpose(0, 3, 1, 2)
    return gxp[:, :, padding:padding + h, padding:padding + w]


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Dense 2-D convolution (cross-correlation); dilation > 1 gives atrous convolution."""
    _check_rank(x, kernel)
    _check_hyper(stride, padding, dilation)
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"input channels {x.shape[1]} != kernel input channels {kernel.shape[1]}", axis="channel"
        )
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[0]},)", axis="channel")

    out = conv2d_forward(x.data, kernel.data, stride, padding, dilation)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _backward(g):
        kh, kw = kernel.shape[2:]
        oh, ow = g.shape[2:]
        win = _windows(_pad(x.data, padding), kh, kw, oh, ow, stride, dilation)
        gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gx = conv2d_input_grad(g, kernel.data, x.shape, stride, padding, dilation)
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d", inputs, out, _backward)


def conv2d_transpose(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution; its input gradient is conv2d with the same kernel."""
    _check_rank(x, kernel)
    _check_hyper(stride, padding)
    if x.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"input channels {x.shape[1]} != kernel input channels {kernel.shape[0]}", axis="channel"
        )
    n, _, h, w = x.shape
    cin, cout, kh, kw = kernel.shape
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)", axis="channel")
    oh = conv_transpose_output_size(h, kh, stride, padding)
    ow = conv_transpose_output_size(w, kw, stride, padding)
    if oh < 1:
        raise DimensionError(f"output height {oh} < 1", axis="height")
    if ow < 1:
        raise DimensionError(f"output width {ow} < 1", axis="width")

    out = conv2d_input_grad(x.data, kernel.data, (n, cout, oh, ow), stride, padding, 1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _backward(g):
        gx = conv2d_forward(g, kernel.data, stride, padding, 1)
        win = _windows(_pad(g, padding), kh, kw, h, w, stride, 1)
        gk = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d_transpose", inputs, out, _backward)


def depthwise_conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """One filter per input channel; output channel c reads input channel c only."""
    _check_rank(x, kernel)
    _check_hyper(stride, padding, dilation)
    n, c, h, w = x.shape
    if kernel.shape[0] != c:
        raise DimensionError(f"kernel channels {kernel.shape[0]} != input channels {c}", axis="channel")
    if kernel.shape[1] != 1:
        raise DimensionError(f"channel multiplier must be 1, got {kernel.shape[1]}", axis="multiplier")
    if bias is not None and bias.shape != (c,):
        raise DimensionError(f"bias shape {bias.shape} != ({c},)", axis="channel")
    kh, kw = kernel.shape[2:]
    oh, ow = _output_dims(h, w, kh, kw, stride, padding, dilation)

    xp = _pad(x.data, padding)
    k = kernel.data[:, 0]
    dtype = np.result_type(x.dtype, kernel.dtype)
    out = np.zeros((n, c, oh, ow), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[_tap(i, j, oh, ow, stride, dilation)] * k[None, :, i, j, None, None]
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(g):
        gk = np.zeros((c, 1, kh, kw), dtype=dtype)
        gxp = np.zeros(xp.shape, dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                idx = _tap(i, j, oh, ow, stride, dilation)
                gk[:, 0, i, j] = (g * xp[idx]).sum(axis=(0, 2, 3))
                gxp[idx] += g * k[None, :, i, j, None, None]
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("depthwise_conv2d", inputs, out, _backward)
