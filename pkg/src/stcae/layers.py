"""Differentiable layer kernels with explicit forward and backward passes.

Tensors are float32 numpy arrays. Spatio-temporal tensors use the
channels-last layout (batch, T, H, W, C). Every ``*_forward`` returns the
output together with a :class:`LayerCache` holding what the matching
``*_backward`` needs; nothing is recomputed on the way back.

2D layers are expressed through the 3D kernels with a temporal extent of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from stcae import _backend
from stcae.errors import ContractError

ACTIVATIONS = ("relu", "tanh", "linear")


def _triple(v):
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ContractError(f"expected a triple, got {v}")
    return v


@dataclass
class Conv3DKernel:
    """Filter cubes and biases of one convolution layer.

    For a convolution ``weights`` is (out_channels, in_channels, S, P, Q) with
    S the temporal extent. A transposed convolution shares the layout of the
    convolution it is the adjoint of, so its weights are
    (in_channels, out_channels, S, P, Q) and ``bias`` has ``weights.shape[1]``
    entries.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1, 1, 1)
    padding: str = "same"

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        self.stride = _triple(self.stride)
        if self.weights.ndim != 5:
            raise ContractError(f"kernel weights must be 5-D, got shape {self.weights.shape}")
        if self.padding not in ("same", "valid"):
            raise ContractError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if min(self.stride) < 1:
            raise ContractError(f"stride must be positive, got {self.stride}")

    @property
    def ksize(self):
        return tuple(self.weights.shape[2:])


@dataclass
class LayerCache:
    kind: str
    input_shape: tuple
    input: Optional[np.ndarray] = None
    preact: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    activation: str = "linear"
    argmax: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    geometry: dict = field(default_factory=dict)


# -- activations ---------------------------------------------------------------

def activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0, dtype=np.float32)
    if activation == "tanh":
        return np.tanh(z, dtype=np.float32)
    if activation == "linear":
        return z
    raise ContractError(f"unknown activation {activation!r}")


def activation_grad(grad_out, cache):
    """Multiply the incoming gradient by the activation derivative."""
    if cache.activation == "relu":
        return grad_out * (cache.preact > 0)
    if cache.activation == "tanh":
        return grad_out * (1.0 - cache.output * cache.output)
    return grad_out


# -- geometry -----------------------------------------------------------------

def conv_geometry(in_extent, ksize, stride, padding):
    """Output extents and low-side zero padding of a convolution.

    ``same`` gives ceil(in / stride) per axis, with the odd padding zero on
    the high side.
    """
    out, lo = [], []
    for n, k, s in zip(in_extent, ksize, stride):
        if padding == "same":
            o = -(-n // s)
            total = max((o - 1) * s + k - n, 0)
            out.append(o)
            lo.append(total // 2)
        else:
            if n < k:
                raise ContractError(f"valid convolution needs extent >= kernel, got {n} < {k}")
            out.append((n - k) // s + 1)
            lo.append(0)
    return tuple(out), tuple(lo)


def deconv_extent(in_extent, ksize, stride, padding):
    if padding == "same":
        return tuple(n * s for n, s in zip(in_extent, stride))
    return tuple((n - 1) * s + k for n, k, s in zip(in_extent, ksize, stride))


def _check5(x, what):
    if x.ndim != 5:
        raise ContractError(f"{what} expects a 5-D (B, T, H, W, C) tensor, got shape {x.shape}")


# -- convolution --------------------------------------------------------------

def conv3d_forward(x, kernel: Conv3DKernel, activation="linear"):
    x = np.ascontiguousarray(x, dtype=np.float32)
    _check5(x, "conv3d_forward")
    w = kernel.weights
    if x.shape[4] != w.shape[1]:
        raise ContractError(
            f"input has {x.shape[4]} channels but kernel expects {w.shape[1]}")
    if kernel.bias.shape != (w.shape[0],):
        raise ContractError(f"bias shape {kernel.bias.shape} != ({w.shape[0]},)")
    out, lo = conv_geometry(x.shape[1:4], kernel.ksize, kernel.stride, kernel.padding)
    z = _backend.kernels.conv3d_fwd(x, w, kernel.stride, lo, out, _backend.get_threads())
    z += kernel.bias
    y = activate(z, activation)
    cache = LayerCache("conv3d", x.shape, input=x, preact=z, output=y,
                       activation=activation, geometry={"pad_lo": lo})
    return y, cache


def conv3d_backward(grad_out, cache: LayerCache, kernel: Conv3DKernel, need_input_grad=True):
    """Returns (grad_input, grad_weights, grad_bias); grad_input is None when not requested."""
    if cache.kind != "conv3d":
        raise ContractError(f"conv3d_backward given a {cache.kind} cache")
    if cache.input.shape[4] != kernel.weights.shape[1]:
        raise ContractError("cache/kernel channel mismatch")
    grad_out = np.asarray(grad_out, dtype=np.float32)
    if grad_out.shape != cache.output.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != output shape {cache.output.shape}")
    g = np.ascontiguousarray(activation_grad(grad_out, cache), dtype=np.float32)
    lo = cache.geometry["pad_lo"]
    k = _backend.kernels
    nt = _backend.get_threads()
    gw = k.conv3d_bwd_weight(cache.input, g, kernel.ksize, kernel.stride, lo, nt)
    gb = g.sum(axis=(0, 1, 2, 3), dtype=np.float64).astype(np.float32)
    gx = None
    if need_input_grad:
        gx = k.conv3d_bwd_input(g, kernel.weights, kernel.stride, lo, cache.input_shape[1:4], nt)
    return gx, gw, gb


def deconv3d_forward(x, kernel: Conv3DKernel, stride=None, activation="linear"):
    """Transposed convolution; the adjoint of conv3d_forward with the same geometry."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    _check5(x, "deconv3d_forward")
    stride = kernel.stride if stride is None else _triple(stride)
    w = kernel.weights
    if x.shape[4] != w.shape[0]:
        raise ContractError(
            f"input has {x.shape[4]} channels but transposed kernel expects {w.shape[0]}")
    if kernel.bias.shape != (w.shape[1],):
        raise ContractError(f"bias shape {kernel.bias.shape} != ({w.shape[1]},)")
    out = deconv_extent(x.shape[1:4], kernel.ksize, stride, kernel.padding)
    back, lo = conv_geometry(out, kernel.ksize, stride, kernel.padding)
    assert back == x.shape[1:4]
    z = _backend.kernels.conv3d_bwd_input(x, w, stride, lo, out, _backend.get_threads())
    z += kernel.bias
    y = activate(z, activation)
    cache = LayerCache("deconv3d", x.shape, input=x, preact=z, output=y,
                       activation=activation, geometry={"pad_lo": lo, "stride": stride})
    return y, cache


def deconv3d_backward(grad_out, cache: LayerCache, kernel: Conv3DKernel, need_input_grad=True):
    if cache.kind != "deconv3d":
        raise ContractError(f"deconv3d_backward given a {cache.kind} cache")
    if cache.input.shape[4] != kernel.weights.shape[0]:
        raise ContractError("cache/kernel channel mismatch")
    grad_out = np.asarray(grad_out, dtype=np.float32)
    if grad_out.shape != cache.output.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != output shape {cache.output.shape}")
    g = np.ascontiguousarray(activation_grad(grad_out, cache), dtype=np.float32)
    lo = cache.geometry["pad_lo"]
    stride = cache.geometry["stride"]
    k = _backend.kernels
    nt = _backend.get_threads()
    # <g, A^T x> = <A g, x>: the roles of input and output swap
    gw = k.conv3d_bwd_weight(g, cache.input, kernel.ksize, stride, lo, nt)
    gb = g.sum(axis=(0, 1, 2, 3), dtype=np.float64).astype(np.float32)
    gx = None
    if need_input_grad:
        gx = k.conv3d_fwd(g, kernel.weights, stride, lo, cache.input_shape[1:4], nt)
    return gx, gw, gb


# -- pooling and upsampling ------------------------------------------------------

def maxpool3d_forward(x, window, stride=None, padding="same"):
    """Non-overlapping max pooling. Ties go to the lowest linear index."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    _check5(x, "maxpool3d_forward")
    window = _triple(window)
    stride = window if stride is None else _triple(stride)
    if stride != window:
        raise ContractError(f"pooling window {window} must equal stride {stride}")
    if any(k not in (1, 2) for k in window):
        raise ContractError(f"pooling window must use extents 1 or 2, got {window}")
    if padding != "same":
        raise ContractError("max pooling supports padding='same' only")
    out = tuple(-(-n // k) for n, k in zip(x.shape[1:4], window))
    y, idx = _backend.kernels.maxpool3d_fwd(x, window, out)
    return y, LayerCache("maxpool3d", x.shape, argmax=idx, geometry={"window": window})


def maxpool3d_backward(grad_out, cache: LayerCache):
    grad_out = np.asarray(grad_out, dtype=np.float32)
    if grad_out.shape != cache.argmax.shape:
        raise ContractError(f"grad_out shape {grad_out.shape} != pooled shape {cache.argmax.shape}")
    return _backend.kernels.maxpool3d_bwd(grad_out, cache.argmax, cache.input_shape[1:])


def upsample3d_forward(x, factor):
    """Nearest-neighbour repetition along T, H and W."""
    x = np.asarray(x, dtype=np.float32)
    _check5(x, "upsample3d_forward")
    factor = _triple(factor)
    y = x
    for ax, f in zip((1, 2, 3), factor):
        if f != 1:
            y = np.repeat(y, f, axis=ax)
    return np.ascontiguousarray(y)


def upsample3d_backward(grad_out, factor):
    """Sum of the gradient over each repetition block."""
    grad_out = np.asarray(grad_out, dtype=np.float32)
    ft, fh, fw = _triple(factor)
    B, T, H, W, C = grad_out.shape
    if T % ft or H % fh or W % fw:
        raise ContractError(f"gradient shape {grad_out.shape} not divisible by factor {factor}")
    g = grad_out.reshape(B, T // ft, ft, H // fh, fh, W // fw, fw, C)
    return g.sum(axis=(2, 4, 6), dtype=np.float32)


# -- dense and dropout -----------------------------------------------------------

def dense_forward(x, weights, bias, activation="linear"):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ContractError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ContractError(f"dense: bias shape {bias.shape} != ({weights.shape[1]},)")
    z = x @ weights + bias
    y = activate(z, activation)
    return y, LayerCache("dense", x.shape, input=x, preact=z, output=y, activation=activation)


def dense_backward(grad_out, cache: LayerCache, weights):
    if cache.kind != "dense":
        raise ContractError(f"dense_backward given a {cache.kind} cache")
    g = activation_grad(np.asarray(grad_out, dtype=np.float32), cache)
    gw = (cache.input.T.astype(np.float64) @ g.astype(np.float64)).astype(np.float32)
    gb = g.sum(axis=0, dtype=np.float64).astype(np.float32)
    gx = (g @ weights.T).astype(np.float32)
    return gx, gw, gb


def dropout(x, rate, rng, training):
    """Inverted dropout: survivors are scaled by 1 / (1 - rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float32)
    if not training or rate == 0.0:
        return x, LayerCache("dropout", x.shape)
    if rng is None:
        raise ContractError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(np.float32) / np.float32(1.0 - rate)
    return x * mask, LayerCache("dropout", x.shape, mask=mask)


def dropout_backward(grad_out, cache: LayerCache):
    if cache.mask is None:
        return grad_out
    return grad_out * cache.mask


# -- initialisation ---------------------------------------------------------------

def glorot_uniform(shape, fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)
