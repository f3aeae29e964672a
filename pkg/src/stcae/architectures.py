"""The six autoencoder variants, full-model forward/backward, and checkpoints.

Variants
--------
dstcae-upsampling, dstcae-deconv, dstcae-c3d
    3D models over windows of shape (T, H, W, 1), default (8, 64, 64, 1).
cae-upsampling, cae-deconv
    2D convolutional models over frames (H, W, 1).
dae
    Fully connected model over flattened frames.

2D models run on the 3D kernels with a singleton temporal axis; shapes are
reported without it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from stcae import layers as L
from stcae.errors import CheckpointMismatch, ContractError

VARIANTS = (
    "dstcae-upsampling",
    "dstcae-deconv",
    "dstcae-c3d",
    "cae-upsampling",
    "cae-deconv",
    "dae",
)

DISPLAY = {
    "dstcae-upsampling": "DSTCAE-UpSampling",
    "dstcae-deconv": "DSTCAE-Deconv",
    "dstcae-c3d": "DSTCAE-C3D",
    "cae-upsampling": "CAE-UpSampling",
    "cae-deconv": "CAE-Deconv",
    "dae": "DAE",
}

LAYER_NAMES = {
    "conv3d": "3D Convolution",
    "maxpool3d": "3D Max-pooling",
    "upsample3d": "3D UpSampling",
    "deconv3d": "3D Deconvolution",
    "conv2d": "2D Convolution",
    "maxpool2d": "2D Max-pooling",
    "upsample2d": "2D UpSampling",
    "deconv2d": "2D Deconvolution",
    "dense": "Fully Connected",
    "flatten": "Flatten",
    "reshape": "Reshape",
    "dropout": "Dropout",
}

KERNEL_3D = (5, 3, 3)
KERNEL_2D = (1, 3, 3)
DROPOUT_RATE = 0.25

PARAM_KINDS = ("conv3d", "conv2d", "deconv3d", "deconv2d", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: Optional[int] = None  # conv/deconv feature maps or dense units
    kernel: Optional[tuple] = None
    stride: tuple = (1, 1, 1)
    factor: Optional[tuple] = None  # pooling window or upsampling factor
    activation: str = "linear"
    rate: float = 0.0
    target: Optional[tuple] = None  # reshape target

    @property
    def name(self):
        return LAYER_NAMES[self.kind]

    @property
    def has_params(self):
        return self.kind in PARAM_KINDS


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    layers: tuple
    input_shape: tuple

    @property
    def is_3d(self):
        return self.variant.startswith("dstcae")

    @property
    def is_dense(self):
        return self.variant == "dae"


def normalize_variant(variant):
    v = str(variant).strip().lower().replace("_", "-")
    if v not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return v


def _conv(kind, ch, act="relu"):
    k = KERNEL_3D if kind.endswith("3d") else KERNEL_2D
    return LayerSpec(kind, channels=ch, kernel=k, activation=act)


def _deconv(kind, ch, stride, act="relu"):
    k = KERNEL_3D if kind.endswith("3d") else KERNEL_2D
    return LayerSpec(kind, channels=ch, kernel=k, stride=stride, activation=act)


def _pool(kind, window):
    return LayerSpec(kind, factor=window, stride=window)


def _up(kind, factor):
    return LayerSpec(kind, factor=factor)


def build_model(variant, input_shape=None, filters=(16, 8), units=(150, 100, 50)):
    """Layer sequence of one variant.

    ``filters`` gives the (wide, narrow) feature-map counts, 16 and 8 in the
    reference architectures; smaller values and a smaller ``input_shape``
    produce shrunken models with the same topology.
    """
    v = normalize_variant(variant)
    wide, narrow = filters
    drop = LayerSpec("dropout", rate=DROPOUT_RATE)
    if v.startswith("dstcae"):
        shape = tuple(input_shape) if input_shape is not None else (8, 64, 64, 1)
        if len(shape) != 4:
            raise ContractError(f"{v} input shape must be (T, H, W, C), got {shape}")
        c_out = shape[-1]
        p2, u2 = (2, 2, 2), (2, 2, 2)
        enc = [_conv("conv3d", wide)]
        if v == "dstcae-c3d":
            enc += [_pool("maxpool3d", (1, 2, 2)), drop,
                    _conv("conv3d", narrow), _pool("maxpool3d", p2),
                    _conv("conv3d", narrow), _pool("maxpool3d", p2)]
        else:
            enc += [_pool("maxpool3d", p2), drop, _conv("conv3d", narrow), _pool("maxpool3d", p2)]
        if v == "dstcae-upsampling":
            dec = [_conv("conv3d", narrow), _up("upsample3d", u2),
                   _conv("conv3d", wide), _up("upsample3d", u2),
                   _conv("conv3d", c_out, "tanh")]
        elif v == "dstcae-deconv":
            dec = [_deconv("deconv3d", narrow, (2, 2, 2)),
                   _deconv("deconv3d", wide, (2, 2, 2)),
                   _deconv("deconv3d", c_out, (1, 1, 1), "tanh")]
        else:
            dec = [_conv("conv3d", narrow), _up("upsample3d", u2),
                   _conv("conv3d", narrow), _up("upsample3d", u2),
                   _conv("conv3d", wide), _up("upsample3d", (1, 2, 2)),
                   _conv("conv3d", c_out, "tanh")]
        return ModelSpec(v, tuple(enc + dec), shape)

    shape = tuple(input_shape) if input_shape is not None else (64, 64, 1)
    if len(shape) != 3:
        raise ContractError(f"{v} input shape must be (H, W, C), got {shape}")
    c_out = shape[-1]
    if v == "dae":
        n = int(np.prod(shape))
        u1, u2, u3 = units
        seq = [LayerSpec("flatten"),
               LayerSpec("dense", channels=u1, activation="relu"), drop,
               LayerSpec("dense", channels=u2, activation="relu"),
               LayerSpec("dense", channels=u3, activation="relu"),
               LayerSpec("dense", channels=u2, activation="relu"),
               LayerSpec("dense", channels=u1, activation="relu"),
               LayerSpec("dense", channels=n, activation="tanh"),
               LayerSpec("reshape", target=shape)]
        return ModelSpec(v, tuple(seq), shape)

    p = (1, 2, 2)
    enc = [_conv("conv2d", wide), _pool("maxpool2d", p),
           _conv("conv2d", narrow), _pool("maxpool2d", p),
           _conv("conv2d", narrow), _pool("maxpool2d", p)]
    if v == "cae-upsampling":
        dec = [_conv("conv2d", narrow), _up("upsample2d", p),
               _conv("conv2d", narrow), _up("upsample2d", p),
               _conv("conv2d", wide), _up("upsample2d", p),
               _conv("conv2d", c_out, "tanh")]
    else:
        dec = [_deconv("deconv2d", narrow, p), _deconv("deconv2d", narrow, p),
               _deconv("deconv2d", wide, p), _deconv("deconv2d", c_out, (1, 1, 1), "tanh")]
    return ModelSpec(v, tuple(enc + dec), shape)


# -- shapes ---------------------------------------------------------------------

def _internal_input(spec):
    if spec.is_3d or spec.is_dense:
        return tuple(spec.input_shape)
    return (1,) + tuple(spec.input_shape)


def _next_shape(layer, shape):
    k = layer.kind
    if k in ("conv3d", "conv2d"):
        out, _ = L.conv_geometry(shape[:3], layer.kernel, layer.stride, "same")
        return out + (layer.channels,)
    if k in ("deconv3d", "deconv2d"):
        return L.deconv_extent(shape[:3], layer.kernel, layer.stride, "same") + (layer.channels,)
    if k in ("maxpool3d", "maxpool2d"):
        return tuple(-(-n // f) for n, f in zip(shape[:3], layer.factor)) + (shape[3],)
    if k in ("upsample3d", "upsample2d"):
        return tuple(n * f for n, f in zip(shape[:3], layer.factor)) + (shape[3],)
    if k == "flatten":
        return (int(np.prod(shape)),)
    if k == "dense":
        return (layer.channels,)
    if k == "reshape":
        return tuple(layer.target)
    return shape


def layer_shapes(spec):
    """Internal output shape of every layer (2D models keep a T=1 axis)."""
    shape = _internal_input(spec)
    out = []
    for layer in spec.layers:
        shape = _next_shape(layer, shape)
        out.append(shape)
    return out


def _public(spec, shape):
    if not spec.is_3d and len(shape) == 4:
        return shape[1:]
    return shape


def shape_table(spec):
    """(layer name, output shape) rows in the layout of the architecture tables.

    Dropout rows are omitted since they do not change shapes.
    """
    rows = [("Input", tuple(spec.input_shape))]
    for layer, shape in zip(spec.layers, layer_shapes(spec)):
        if layer.kind == "dropout":
            continue
        rows.append((layer.name, _public(spec, shape)))
    return rows


def format_shape_table(spec):
    return "\n".join(f"{name} - {shape}" for name, shape in shape_table(spec))


# -- parameters -------------------------------------------------------------------

@dataclass
class ModelParams:
    """Weight and bias arrays keyed by layer index."""

    variant: str
    tensors: dict = field(default_factory=dict)

    def weight(self, i):
        return self.tensors[i][0]

    def bias(self, i):
        return self.tensors[i][1]

    def items(self):
        return sorted(self.tensors.items())

    def copy(self):
        return ModelParams(self.variant, {i: [t.copy() for t in ts] for i, ts in self.tensors.items()})

    def zeros_like(self):
        return ModelParams(self.variant, {i: [np.zeros_like(t) for t in ts]
                                          for i, ts in self.tensors.items()})

    def num_parameters(self):
        return sum(t.size for ts in self.tensors.values() for t in ts)


def param_shapes(spec):
    shapes = {}
    prev = _internal_input(spec)
    for i, (layer, shape) in enumerate(zip(spec.layers, layer_shapes(spec))):
        if layer.kind in ("conv3d", "conv2d"):
            shapes[i] = [(layer.channels, prev[-1]) + tuple(layer.kernel), (layer.channels,)]
        elif layer.kind in ("deconv3d", "deconv2d"):
            shapes[i] = [(prev[-1], layer.channels) + tuple(layer.kernel), (layer.channels,)]
        elif layer.kind == "dense":
            shapes[i] = [(prev[0], layer.channels), (layer.channels,)]
        prev = shape
    return shapes


def init_params(spec, seed=0):
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for i, (wshape, bshape) in param_shapes(spec).items():
        if len(wshape) == 2:
            fan_in, fan_out = wshape
        else:
            taps = int(np.prod(wshape[2:]))
            if spec.layers[i].kind.startswith("deconv"):
                fan_in, fan_out = wshape[0] * taps, wshape[1] * taps
            else:
                fan_in, fan_out = wshape[1] * taps, wshape[0] * taps
        tensors[i] = [L.glorot_uniform(wshape, fan_in, fan_out, rng),
                      np.zeros(bshape, dtype=np.float32)]
    return ModelParams(spec.variant, tensors)


def check_params(spec, params):
    if params.variant != spec.variant:
        raise CheckpointMismatch(
            f"parameters are for {params.variant!r}, model is {spec.variant!r}")
    expected = param_shapes(spec)
    if sorted(expected) != sorted(params.tensors):
        raise CheckpointMismatch("parameter layer indices do not match the model")
    for i, shapes in expected.items():
        got = [tuple(t.shape) for t in params.tensors[i]]
        if got != [tuple(s) for s in shapes]:
            raise CheckpointMismatch(f"layer {i}: parameter shapes {got} != expected {shapes}")


# -- forward / backward -------------------------------------------------------------

def _kernel(layer, params, i):
    return L.Conv3DKernel(params.weight(i), params.bias(i), stride=layer.stride, padding="same")


def model_forward(spec, params, x, training=False, rng=None):
    """Run the autoencoder on a batch shaped (B,) + spec.input_shape."""
    x = np.asarray(x, dtype=np.float32)
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ContractError(f"input shape {x.shape[1:]} != model input {spec.input_shape}")
    if rng is not None and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    B = x.shape[0]
    h = x.reshape((B,) + _internal_input(spec))
    caches = []
    for i, layer in enumerate(spec.layers):
        k = layer.kind
        if k in ("conv3d", "conv2d"):
            h, c = L.conv3d_forward(h, _kernel(layer, params, i), layer.activation)
        elif k in ("deconv3d", "deconv2d"):
            h, c = L.deconv3d_forward(h, _kernel(layer, params, i), activation=layer.activation)
        elif k in ("maxpool3d", "maxpool2d"):
            h, c = L.maxpool3d_forward(h, layer.factor)
        elif k in ("upsample3d", "upsample2d"):
            c = L.LayerCache(k, h.shape, geometry={"factor": layer.factor})
            h = L.upsample3d_forward(h, layer.factor)
        elif k == "dense":
            h, c = L.dense_forward(h, params.weight(i), params.bias(i), layer.activation)
        elif k == "dropout":
            h, c = L.dropout(h, layer.rate, rng, training)
        elif k in ("flatten", "reshape"):
            c = L.LayerCache(k, h.shape)
            h = h.reshape((B,) + (_next_shape(layer, h.shape[1:])))
        else:
            raise ContractError(f"unknown layer kind {k!r}")
        caches.append(c)
    return h.reshape(x.shape), caches


def model_backward(spec, params, caches, grad_output):
    """Gradients of the loss whose output-gradient is ``grad_output``."""
    if len(caches) != len(spec.layers):
        raise ContractError(f"{len(caches)} caches for {len(spec.layers)} layers")
    grads = params.zeros_like()
    g = np.asarray(grad_output, dtype=np.float32)
    g = g.reshape((g.shape[0],) + layer_shapes(spec)[-1])
    first_param = min(i for i, layer in enumerate(spec.layers) if layer.has_params)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, c = spec.layers[i], caches[i]
        k = layer.kind
        if k in ("conv3d", "conv2d"):
            g, gw, gb = L.conv3d_backward(g, c, _kernel(layer, params, i),
                                          need_input_grad=i > first_param)
            grads.tensors[i] = [gw, gb]
        elif k in ("deconv3d", "deconv2d"):
            g, gw, gb = L.deconv3d_backward(g, c, _kernel(layer, params, i),
                                            need_input_grad=i > first_param)
            grads.tensors[i] = [gw, gb]
        elif k in ("maxpool3d", "maxpool2d"):
            g = L.maxpool3d_backward(g, c)
        elif k in ("upsample3d", "upsample2d"):
            g = L.upsample3d_backward(g, c.geometry["factor"])
        elif k == "dense":
            g, gw, gb = L.dense_backward(g, c, params.weight(i))
            grads.tensors[i] = [gw, gb]
        elif k == "dropout":
            g = L.dropout_backward(g, c)
        elif k in ("flatten", "reshape"):
            g = g.reshape(c.input_shape)
        if g is None:
            break
    return grads


# -- checkpoints ------------------------------------------------------------------

MAGIC = b"STCAE1"


def save_checkpoint(params, path):
    """Binary checkpoint: magic, variant, layer count, then per layer its index
    and each tensor's shape and little-endian float32 data."""
    name = params.variant.encode("utf-8")
    parts = [MAGIC, struct.pack("<H", len(name)), name, struct.pack("<I", len(params.tensors))]
    for i, ts in params.items():
        parts.append(struct.pack("<II", i, len(ts)))
        for t in ts:
            parts.append(struct.pack("<I", t.ndim))
            parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
            parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointMismatch(f"{path}: not an STCAE1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (n,) = take("<H")
        variant = buf[pos:pos + n].decode("utf-8")
        pos += n
        (count,) = take("<I")
        tensors = {}
        for _ in range(count):
            idx, nt = take("<II")
            ts = []
            for _ in range(nt):
                (ndim,) = take("<I")
                shape = take(f"<{ndim}I")
                size = int(np.prod(shape)) if ndim else 1
                data = np.frombuffer(buf, dtype="<f4", count=size, offset=pos)
                pos += 4 * size
                ts.append(data.astype(np.float32).reshape(shape))
            tensors[idx] = ts
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointMismatch(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointMismatch(f"{path}: {len(buf) - pos} trailing bytes")
    return ModelParams(variant, tensors)
