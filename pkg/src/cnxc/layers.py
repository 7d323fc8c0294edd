"""Forward and backward passes for every layer in the network.

Layers are pure functions: ``*_forward(x, params) -> (y, cache)`` and
``*_backward(grad_out, cache) -> grads``. A cache is only valid for the
immediately preceding forward call. Convolution follows the deep-learning
convention (sliding dot product, no kernel flip); out-of-bounds taps under
zero padding read 0.

Everything is vectorised with numpy (im2col windows + einsum); the test suite
checks the implementation against naive nested-loop oracles and central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError, ParameterError, ShapeError
from .rng import Rng

TRAIN = "train"
INFER = "infer"


# ---------------------------------------------------------------- parameters

@dataclass
class ConvParams:
    kernels: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray     # (out_ch,)
    stride: int = 1
    padding: int = 0


@dataclass
class SepConvParams:
    depthwise: np.ndarray  # (in_ch, 1, kh, kw), one spatial filter per channel
    pointwise: np.ndarray  # (out_ch, in_ch, 1, 1)
    bias: np.ndarray       # (out_ch,)
    stride: int = 1
    padding: int = 0


@dataclass
class BatchNormParams:
    gamma: np.ndarray         # (ch,)
    beta: np.ndarray          # (ch,)
    running_mean: np.ndarray  # (ch,)
    running_var: np.ndarray   # (ch,)
    momentum: float = 0.9
    epsilon: float = 1e-5


# ------------------------------------------------------------- convolutions

def _conv_geometry(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be (batch, ch, h, w), got {x.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")
    _, _, h, w = x.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    return oh, ow


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Padded input and its (b, c, oh, ow, kh, kw) sliding-window view."""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return xp, win


def _scatter_windows(gwin_hook, shape_padded, kh, kw, stride, oh, ow, padding, h, w):
    """Accumulate per-offset window gradients back onto the input plane.

    gwin_hook(m, n) must return the (b, c, oh, ow) gradient contribution of
    kernel tap (m, n). kh*kw is small, so the python loop is cheap.
    """
    gxp = np.zeros(shape_padded, dtype=gwin_hook(0, 0).dtype)
    for m in range(kh):
        for n in range(kw):
            gxp[:, :, m : m + stride * oh : stride, n : n + stride * ow : stride] += gwin_hook(m, n)
    return gxp[:, :, padding : padding + h, padding : padding + w]


@dataclass
class ConvCache:
    x_shape: tuple
    windows: np.ndarray
    params: ConvParams
    out_hw: tuple


def conv2d_forward(x: np.ndarray, p: ConvParams):
    """out[b,o,i,j] = sum_{c,m,n} x[b,c,i*s+m-pad, j*s+n-pad] * K[o,c,m,n] + bias[o]."""
    out_ch, in_ch, kh, kw = p.kernels.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {in_ch}")
    oh, ow = _conv_geometry(x, kh, kw, p.stride, p.padding)
    _, win = _windows(x, kh, kw, p.stride, p.padding)
    y = np.einsum("bcijmn,ocmn->boij", win, p.kernels, optimize=True)
    y += p.bias[None, :, None, None]
    return y, ConvCache(x.shape, win, p, (oh, ow))


def conv2d_backward(grad_out: np.ndarray, cache: ConvCache):
    p = cache.params
    b, c, h, w = cache.x_shape
    oh, ow = cache.out_hw
    out_ch, in_ch, kh, kw = p.kernels.shape
    if grad_out.shape != (b, out_ch, oh, ow):
        raise ShapeError(f"grad_out {grad_out.shape} != forward output {(b, out_ch, oh, ow)}")
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_kernels = np.einsum("boij,bcijmn->ocmn", grad_out, cache.windows, optimize=True)
    padded_shape = (b, c, h + 2 * p.padding, w + 2 * p.padding)

    def tap(m, n):
        return np.einsum("boij,oc->bcij", grad_out, p.kernels[:, :, m, n], optimize=True)

    grad_input = _scatter_windows(tap, padded_shape, kh, kw, p.stride, oh, ow, p.padding, h, w)
    return grad_input, grad_kernels, grad_bias


@dataclass
class SepConvCache:
    x_shape: tuple
    windows: np.ndarray
    mid: np.ndarray
    params: SepConvParams
    out_hw: tuple


def sepconv_forward(x: np.ndarray, p: SepConvParams):
    """Per-channel spatial convolution followed by 1x1 channel mixing plus bias."""
    in_ch, one, kh, kw = p.depthwise.shape
    out_ch = p.pointwise.shape[0]
    if one != 1:
        raise ShapeError("depthwise kernels must have a single filter per channel")
    if x.shape[1] != in_ch or p.pointwise.shape[1] != in_ch:
        raise ShapeError(
            f"channel mismatch: input {x.shape[1]}, depthwise {in_ch}, "
            f"pointwise {p.pointwise.shape[1]}"
        )
    oh, ow = _conv_geometry(x, kh, kw, p.stride, p.padding)
    _, win = _windows(x, kh, kw, p.stride, p.padding)
    mid = np.einsum("bcijmn,cmn->bcij", win, p.depthwise[:, 0], optimize=True)
    y = np.einsum("bcij,oc->boij", mid, p.pointwise[:, :, 0, 0], optimize=True)
    y += p.bias[None, :, None, None]
    return y, SepConvCache(x.shape, win, mid, p, (oh, ow))


def sepconv_backward(grad_out: np.ndarray, cache: SepConvCache):
    p = cache.params
    b, c, h, w = cache.x_shape
    oh, ow = cache.out_hw
    in_ch, _, kh, kw = p.depthwise.shape
    out_ch = p.pointwise.shape[0]
    if grad_out.shape != (b, out_ch, oh, ow):
        raise ShapeError(f"grad_out {grad_out.shape} != forward output {(b, out_ch, oh, ow)}")
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_pointwise = np.einsum("boij,bcij->oc", grad_out, cache.mid, optimize=True)
    grad_pointwise = grad_pointwise.reshape(out_ch, in_ch, 1, 1)
    grad_mid = np.einsum("boij,oc->bcij", grad_out, p.pointwise[:, :, 0, 0], optimize=True)
    grad_depthwise = np.einsum("bcij,bcijmn->cmn", grad_mid, cache.windows, optimize=True)
    grad_depthwise = grad_depthwise.reshape(in_ch, 1, kh, kw)
    padded_shape = (b, c, h + 2 * p.padding, w + 2 * p.padding)

    def tap(m, n):
        return grad_mid * p.depthwise[None, :, 0, m, n, None, None]

    grad_input = _scatter_windows(tap, padded_shape, kh, kw, p.stride, oh, ow, p.padding, h, w)
    return grad_input, grad_depthwise, grad_pointwise, grad_bias


def compose_sepconv_kernel(p: SepConvParams) -> ConvParams:
    """Equivalent standard convolution: K[o,c,m,n] = pointwise[o,c] * depthwise[c,m,n]."""
    k = p.pointwise[:, :, 0, 0][:, :, None, None] * p.depthwise[None, :, 0, :, :]
    return ConvParams(kernels=k, bias=p.bias, stride=p.stride, padding=p.padding)


# --------------------------------------------------------------- activations

def relu(x: np.ndarray):
    return np.maximum(x, 0), (x > 0)


def relu_backward(grad_out: np.ndarray, cache: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0 (mask is strict)
    return grad_out * cache


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic; outputs clipped into the open (0, 1)."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=z.dtype)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    tiny = np.finfo(z.dtype).tiny
    top = np.nextafter(z.dtype.type(1.0), z.dtype.type(0.0))
    return np.clip(out, tiny, top)


def sigmoid_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    return grad_out * y * (1.0 - y)


# ------------------------------------------------------------------- pooling

def maxpool2(x: np.ndarray):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be (batch, ch, h, w), got {x.shape}")
    b, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"pooling needs h, w >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = (
        x[:, :, : 2 * h2, : 2 * w2]
        .reshape(b, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2, w2, 4)
    )
    # argmax returns the first max in row-major window order: the tie rule
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, idx)


def maxpool2_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    x_shape, idx = cache
    b, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    if grad_out.shape != (b, c, h2, w2):
        raise ShapeError(f"grad_out {grad_out.shape} != pooled shape {(b, c, h2, w2)}")
    gwin = np.zeros((b, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=-1)
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    gx[:, :, : 2 * h2, : 2 * w2] = (
        gwin.reshape(b, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, 2 * h2, 2 * w2)
    )
    return gx


# ---------------------------------------------------------------- batch norm

@dataclass
class BatchNormCache:
    mode: str
    params: BatchNormParams
    xhat: np.ndarray | None = None
    invstd: np.ndarray | None = None
    n: int = 0


def batchnorm_forward(x: np.ndarray, p: BatchNormParams, mode: str):
    """Per-channel normalisation; train mode updates the running statistics."""
    if x.ndim != 4:
        raise ShapeError(f"batchnorm input must be (batch, ch, h, w), got {x.shape}")
    b, c, h, w = x.shape
    if c != p.gamma.shape[0]:
        raise ShapeError(f"input has {c} channels, batchnorm expects {p.gamma.shape[0]}")
    g = p.gamma[None, :, None, None]
    bta = p.beta[None, :, None, None]
    if mode == INFER:
        invstd = 1.0 / np.sqrt(p.running_var + p.epsilon)
        xhat = (x - p.running_mean[None, :, None, None]) * invstd[None, :, None, None]
        y = g * xhat + bta
        return y, BatchNormCache(mode=INFER, params=p, xhat=xhat, invstd=invstd)
    n = b * h * w
    if n < 2:
        raise DegenerateBatchError(f"train-mode batch norm needs >= 2 elements per channel, got {n}")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))  # biased, also used for the running update
    invstd = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x - mean[None, :, None, None]) * invstd[None, :, None, None]
    y = g * xhat + bta
    p.running_mean[:] = p.momentum * p.running_mean + (1.0 - p.momentum) * mean
    p.running_var[:] = p.momentum * p.running_var + (1.0 - p.momentum) * var
    return y, BatchNormCache(mode=TRAIN, params=p, xhat=xhat, invstd=invstd, n=n)


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache):
    p = cache.params
    g = p.gamma[None, :, None, None]
    if cache.mode == INFER:
        # frozen statistics: a per-channel affine map
        grad_beta = grad_out.sum(axis=(0, 2, 3))
        grad_gamma = (grad_out * cache.xhat).sum(axis=(0, 2, 3))
        grad_input = grad_out * g * cache.invstd[None, :, None, None]
        return grad_input, grad_gamma, grad_beta
    xhat, invstd, n = cache.xhat, cache.invstd, cache.n
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    dxhat = grad_out * g
    s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    grad_input = (invstd[None, :, None, None] / n) * (n * dxhat - s1 - xhat * s2)
    return grad_input, grad_gamma, grad_beta


# ------------------------------------------------------------------- dropout

def dropout(x: np.ndarray, p_drop: float, mode: str, rng: Rng | None = None):
    """Inverted dropout: zero with probability p_drop, scale survivors by 1/(1-p)."""
    if not 0.0 <= p_drop < 1.0:
        raise ParameterError(f"p_drop must be in [0, 1), got {p_drop}")
    if mode == INFER or p_drop == 0.0:
        return x, None
    if rng is None:
        raise ParameterError("train-mode dropout needs an Rng for the mask")
    u = rng.uniform(x.size).reshape(x.shape)
    scale = 1.0 / (1.0 - p_drop)
    mask = (u >= p_drop).astype(x.dtype) * x.dtype.type(scale)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    if cache is None:
        return grad_out
    return grad_out * cache


# --------------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Affine map x @ W + b for (batch, in) inputs."""
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects rank-2 input/weights, got {x.shape}, {weights.shape}")
    if x.shape[1] != weights.shape[0] or bias.shape[0] != weights.shape[1]:
        raise ShapeError(
            f"dense shapes disagree: x {x.shape}, W {weights.shape}, b {bias.shape}"
        )
    return x @ weights + bias, (x, weights)


def dense_backward(grad_out: np.ndarray, cache):
    x, weights = cache
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(f"grad_out {grad_out.shape} != output {(x.shape[0], weights.shape[1])}")
    grad_input = grad_out @ weights.T
    grad_weights = x.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weights, grad_bias
