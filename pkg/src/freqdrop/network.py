"""Sequential CNN definition with optional FD layers, plus checkpoint I/O."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import FormatError, ShapeError
from .fd_layer import FDDraw, fd_backward, fd_forward


@dataclass
class Conv:
    name: str
    layer: L.ConvLayer


@dataclass
class FD:
    name: str
    channels: int = 0


@dataclass
class ReLU:
    name: str = "relu"


@dataclass
class MaxPool:
    name: str = "pool"


@dataclass
class Flatten:
    name: str = "flatten"


@dataclass
class Dense:
    name: str
    layer: L.DenseLayer


@dataclass
class NetworkSpec:
    layers: list
    num_classes: int
    input_shape: tuple[int, int, int]
    shapes: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.check()

    def check(self):
        """Chain shapes through every layer; fills ``self.shapes`` with per-layer outputs."""
        shape = tuple(self.input_shape)
        shapes = []
        prev = None
        for lyr in self.layers:
            if isinstance(lyr, Conv):
                if len(shape) != 3 or shape[0] != lyr.layer.in_channels:
                    raise ShapeError(f"{lyr.name}: expects {lyr.layer.in_channels} input channels, got {shape}")
                ho, wo = lyr.layer.output_hw(shape[1], shape[2])
                if ho < 1 or wo < 1:
                    raise ShapeError(f"{lyr.name}: output would be empty")
                shape = (lyr.layer.out_channels, ho, wo)
            elif isinstance(lyr, FD):
                if not isinstance(prev, Conv):
                    raise ShapeError(f"{lyr.name}: FD layers must directly follow a Conv layer")
                lyr.channels = shape[0]
            elif isinstance(lyr, MaxPool):
                if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                    raise ShapeError(f"{lyr.name}: needs a feature map of at least 2x2")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif isinstance(lyr, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(lyr, Dense):
                if len(shape) != 1 or shape[0] != lyr.layer.weights.shape[0]:
                    raise ShapeError(f"{lyr.name}: expects {lyr.layer.weights.shape[0]} inputs, got {shape}")
                shape = (lyr.layer.weights.shape[1],)
            elif not isinstance(lyr, ReLU):
                raise ShapeError(f"unsupported layer {lyr!r}")
            shapes.append(shape)
            prev = lyr
        if shape != (self.num_classes,):
            raise ShapeError(f"network output {shape} does not match {self.num_classes} classes")
        self.shapes = shapes
        return self

    @property
    def fd_layers(self) -> list[FD]:
        return [lyr for lyr in self.layers if isinstance(lyr, FD)]

    def params(self) -> dict[str, np.ndarray]:
        """Ordered name -> array mapping; the arrays are the live parameters."""
        out = {}
        for lyr in self.layers:
            if isinstance(lyr, (Conv, Dense)):
                out[f"{lyr.name}.w"] = lyr.layer.weights
                out[f"{lyr.name}.b"] = lyr.layer.bias
        return out

    def load_params(self, tensors: dict[str, np.ndarray]):
        for name, p in self.params().items():
            if name not in tensors:
                raise ShapeError(f"missing tensor {name}")
            if tensors[name].shape != p.shape:
                raise ShapeError(f"tensor {name} has shape {tensors[name].shape}, expected {p.shape}")
            p[...] = tensors[name]
        return self

    def without_fd(self) -> "NetworkSpec":
        """Same parameters (shared, not copied) with every FD layer removed."""
        return NetworkSpec([lyr for lyr in self.layers if not isinstance(lyr, FD)], self.num_classes, self.input_shape)


def tiny_net(num_classes=2, input_shape=(1, 28, 28), rng=None, with_fd=True, widths=(16, 32)) -> NetworkSpec:
    """Conv-[FD]-ReLU-Pool x2, Flatten, Dense; Kaiming-uniform weights, zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    c_in, h, w = input_shape
    layers = []
    for idx, c_out in enumerate(widths, start=1):
        fan_in = c_in * 9
        conv = L.ConvLayer(L.kaiming_uniform((c_out, c_in, 3, 3), fan_in, rng), np.zeros(c_out), 1, 1)
        layers.append(Conv(f"conv{idx}", conv))
        if with_fd:
            layers.append(FD(f"fd{idx}"))
        layers += [ReLU(f"relu{idx}"), MaxPool(f"pool{idx}")]
        c_in, h, w = c_out, h // 2, w // 2
    flat = c_in * h * w
    layers += [Flatten(), Dense("dense", L.DenseLayer(L.kaiming_uniform((flat, num_classes), flat, rng), np.zeros(num_classes)))]
    return NetworkSpec(layers, num_classes, tuple(input_shape))


def _draw_for(draws, i):
    if draws is None:
        return None
    return draws[i]


def forward(net: NetworkSpec, x: np.ndarray, draws=None, keep_cache=False):
    """Run the network. ``draws`` holds one FDDraw (or None = identity) per FD layer."""
    L.check_tensor4(x)
    if tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    if draws is not None and len(draws) != len(net.fd_layers):
        raise ShapeError(f"need {len(net.fd_layers)} FD draws, got {len(draws)}")
    cache = []
    fd_i = 0
    h = x
    first_conv = True
    for lyr in net.layers:
        inp = h
        if isinstance(lyr, Conv):
            h, cols = L.conv2d_forward_cols(h, lyr.layer)
            cache.append((inp, cols, first_conv) if keep_cache else None)
            first_conv = False
        elif isinstance(lyr, FD):
            draw = _draw_for(draws, fd_i)
            fd_i += 1
            h = fd_forward(h, draw)
            cache.append(draw)
        elif isinstance(lyr, ReLU):
            h = L.relu_forward(h)
            cache.append(inp if keep_cache else None)
        elif isinstance(lyr, MaxPool):
            h, arg = L.maxpool2_forward(h)
            cache.append((inp.shape, arg) if keep_cache else None)
        elif isinstance(lyr, Flatten):
            cache.append(inp.shape)
            h = h.reshape(h.shape[0], -1)
        elif isinstance(lyr, Dense):
            cache.append(inp if keep_cache else None)
            h = L.dense_forward(h, lyr.layer)
    return h, cache


def forward_backward(net: NetworkSpec, x: np.ndarray, labels: np.ndarray, draws=None):
    """Loss, gradients (keyed like ``net.params()``) and logits for one batch."""
    logits, cache = forward(net, x, draws, keep_cache=True)
    loss, g = L.softmax_xent(logits, labels)
    grads = {}
    for lyr, c in zip(reversed(net.layers), reversed(cache)):
        if isinstance(lyr, Dense):
            g, gw, gb = L.dense_backward(g, c, lyr.layer)
            grads[f"{lyr.name}.w"], grads[f"{lyr.name}.b"] = gw, gb
        elif isinstance(lyr, Flatten):
            g = g.reshape(c)
        elif isinstance(lyr, MaxPool):
            g = L.maxpool2_backward(g, c[1], c[0])
        elif isinstance(lyr, ReLU):
            g = L.relu_backward(g, c)
        elif isinstance(lyr, FD):
            g = fd_backward(g, c)
        elif isinstance(lyr, Conv):
            inp, cols, is_first = c
            # the input image needs no gradient
            g, gw, gb = L.conv2d_backward(g, inp, lyr.layer, cols=cols, need_grad_x=not is_first)
            grads[f"{lyr.name}.w"], grads[f"{lyr.name}.b"] = gw, gb
    grads = {name: grads[name] for name in net.params()}
    return loss, grads, logits


def input_gradient(net: NetworkSpec, x, labels, draws=None):
    """Gradient of the loss with respect to the network input (testing aid)."""
    logits, cache = forward(net, x, draws, keep_cache=True)
    _, g = L.softmax_xent(logits, labels)
    for lyr, c in zip(reversed(net.layers), reversed(cache)):
        if isinstance(lyr, Dense):
            g = L.dense_backward(g, c, lyr.layer)[0]
        elif isinstance(lyr, Flatten):
            g = g.reshape(c)
        elif isinstance(lyr, MaxPool):
            g = L.maxpool2_backward(g, c[1], c[0])
        elif isinstance(lyr, ReLU):
            g = L.relu_backward(g, c)
        elif isinstance(lyr, FD):
            g = fd_backward(g, c)
        elif isinstance(lyr, Conv):
            g = L.conv2d_backward(g, c[0], lyr.layer, cols=c[1])[0]
    return g


def predict_logits(net: NetworkSpec, x: np.ndarray, draws=None, batch_size=64) -> np.ndarray:
    # small batches keep the im2col buffers in cache
    out = [forward(net, x[i : i + batch_size], draws)[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


# -- checkpoint format ----------------------------------------------------------
#
# magic "FDNN", u32 version, then until EOF per tensor:
#   u32 name length, UTF-8 name, u32 rank, rank x u64 dims, float64 data.
# Everything little-endian.

CKPT_MAGIC = b"FDNN"
CKPT_VERSION = 1


def _atomic_write(path, payload: bytes):
    path = os.fspath(path)
    if not path:
        raise FileNotFoundError("empty output path")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    if len(buf) < 8:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    pos = 8
    out = {}
    while pos < len(buf):
        start = pos
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + nlen > len(buf):
                raise struct.error
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
        except (struct.error, UnicodeDecodeError):
            raise FormatError("truncated or corrupt tensor header", offset=start) from None
        count = int(np.prod(dims, dtype=object)) if rank else 1
        nbytes = 8 * count
        if pos + nbytes > len(buf):
            raise FormatError(f"tensor {name!r} data truncated", offset=pos)
        out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
        pos += nbytes
    return out


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    _atomic_write(path, encode_checkpoint(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def net_from_checkpoint(tensors: dict[str, np.ndarray], with_fd=True) -> NetworkSpec:
    """Rebuild a TinyNet-shaped network from checkpoint tensor shapes."""
    try:
        c1, c2, dw = tensors["conv1.w"], tensors["conv2.w"], tensors["dense.w"]
    except KeyError as e:
        raise ShapeError(f"checkpoint lacks tensor {e.args[0]}") from None
    if "meta.input_shape" in tensors:
        shape = tuple(int(v) for v in tensors["meta.input_shape"])
    else:
        side = int(round(np.sqrt(dw.shape[0] / c2.shape[0]))) * 4
        shape = (c1.shape[1], side, side)
    net = tiny_net(dw.shape[1], shape, with_fd=with_fd, widths=(c1.shape[0], c2.shape[0]))
    return net.load_params(tensors)
