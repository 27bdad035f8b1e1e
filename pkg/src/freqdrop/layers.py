"""Forward and backward passes of the CNN building blocks, in float64 numpy.

Feature maps are ``(N, C, H, W)`` arrays. Convolutions use im2col + GEMM; the
column matrix can be handed back to the backward pass to avoid rebuilding it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import NumericError, ShapeError


def check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError(f"non-finite values produced by {where}")
    return a


def check_tensor4(x: np.ndarray, name: str = "x") -> np.ndarray:
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty (N, C, H, W) array, got shape {x.shape}")
    return x


@dataclass
class ConvLayer:
    weights: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray  # (C_out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be (C_out, C_in, k, k), got {self.weights.shape}")
        if self.weights.shape[2] % 2 == 0:
            raise ShapeError("conv kernel size must be odd")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError("conv bias must have one entry per output channel")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError("dense weights must be (in, out) with bias of shape (out,)")


def kaiming_uniform(shape, fan_in: int, rng) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- convolution ------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _im2col(x, k, stride, padding):
    """Column matrix with rows ordered (n, ho, wo) and columns (i, j, c)."""
    n, c, h, w = x.shape
    ho, wo = (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1
    return _accel.im2col(_f64(x), k, stride, padding, ho, wo), (ho, wo)


def _weight_matrix(layer):
    # (C_out, k*k*C_in) with columns ordered (i, j, c) to match _im2col
    return layer.weights.transpose(0, 2, 3, 1).reshape(layer.out_channels, -1)


def conv2d_forward_cols(x: np.ndarray, layer: ConvLayer):
    """Like :func:`conv2d_forward` but also returns the im2col matrix."""
    check_tensor4(x)
    if x.shape[1] != layer.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    ho, wo = layer.output_hw(x.shape[2], x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError("convolution output would be empty")
    cols, _ = _im2col(x, layer.kernel_size, layer.stride, layer.padding)
    rows = cols @ _weight_matrix(layer).T
    out = _accel.rows_to_nchw(rows, _f64(layer.bias), x.shape[0], ho, wo)
    return check_finite(out, "conv2d_forward"), cols


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Cross-correlation with bias; output ``floor((H + 2p - k)/s) + 1`` per side."""
    return conv2d_forward_cols(x, layer)[0]


def conv2d_backward(grad_out, x, layer: ConvLayer, cols=None, need_grad_x=True):
    """Return ``(grad_x, grad_w, grad_b)``; ``grad_x`` is None if not requested."""
    check_tensor4(grad_out, "grad_out")
    n, c, h, w = x.shape
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    ho, wo = layer.output_hw(h, w)
    o = layer.out_channels
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output {(n, o, ho, wo)}")
    if cols is None:
        cols, _ = _im2col(x, k, s, p)
    g = _accel.nchw_to_rows(_f64(grad_out))
    grad_w = (g.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_grad_x:
        gcols = g @ _weight_matrix(layer)
        grad_x = _accel.col2im(gcols, n, c, h, w, k, s, p, ho, wo)
    return grad_x, np.ascontiguousarray(grad_w), grad_b


# -- elementwise / pooling ----------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise ShapeError("relu grad_out and input shapes differ")
    return _accel.relu_grad(_f64(grad_out), _f64(x))


def maxpool2_forward(x: np.ndarray):
    """2x2 max pool, stride 2. Returns ``(out, argmax)``.

    ``argmax`` indexes the window in row-major order; ties go to the first
    maximal element. Odd trailing rows/columns are dropped.
    """
    check_tensor4(x)
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ShapeError("maxpool2 needs at least a 2x2 input")
    return _accel.maxpool2(_f64(x))


def maxpool2_backward(grad_out: np.ndarray, arg: np.ndarray, in_shape) -> np.ndarray:
    """Route each gradient to the input element that won the forward max."""
    if grad_out.shape != arg.shape:
        raise ShapeError("maxpool grad_out does not match the pooled shape")
    return _accel.maxpool2_grad(_f64(grad_out), arg, in_shape[2], in_shape[3])


# -- dense / loss ---------------------------------------------------------------


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.weights.shape[0]:
        raise ShapeError(f"dense input shape {x.shape} does not match weights {layer.weights.shape}")
    return check_finite(x @ layer.weights + layer.bias, "dense_forward")


def dense_backward(grad_out: np.ndarray, x: np.ndarray, layer: DenseLayer):
    """Return ``(grad_x, grad_w, grad_b)``."""
    if grad_out.shape != (x.shape[0], layer.weights.shape[1]):
        raise ShapeError("dense grad_out shape mismatch")
    return grad_out @ layer.weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over the batch. Returns ``(loss, grad_logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("logits must be (N, C) with N labels")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


# -- optimizer -----------------------------------------------------------------


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` so their global L2 norm is at most ``max_norm``; 0 disables.

    Returns ``(grads, norm)`` with the norm measured before clipping.
    """
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, velocity=None):
    """In-place SGD with heavy-ball momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    ``velocity`` is a dict keyed like ``params``; it is created on first use.
    Returns ``(params, velocity)``.
    """
    if lr < 0 or not (0.0 <= momentum < 1.0) or weight_decay < 0:
        raise ValueError("need lr >= 0, 0 <= momentum < 1 and weight_decay >= 0")
    if velocity is None:
        velocity = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        v = velocity.get(name)
        step = g + weight_decay * p if weight_decay else g.copy()
        if v is None:
            v = step
        else:
            v *= momentum
            v += step
        if not np.isfinite(v).all():
            raise NumericError(f"non-finite update for parameter {name}")
        velocity[name] = v
        p -= lr * v
    return params, velocity
