"""Layer kernels and the momentum-SGD update.

Values are plain numpy ndarrays, row-major. Spatial activations are (C, H, W)
for a single image or (N, C, H, W) for a batch; every kernel accepts either
and returns the matching rank. Computation stays in the input dtype, so
training runs in float32 while gradient cross-checks can run in float64.

The convolution accumulates one kernel tap at a time in (channel, row, col)
order, which makes its floating-point summation order identical to a scalar
nested-loop implementation -- results are reproducible bit for bit against
such an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes do not compose."""


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Scaled normal initialization with variance 2/fan_in."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def conv_output_size(f_in: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (f_in + 2 * padding - kernel) // stride + 1


def _as_batch(x: np.ndarray, what: str = "input") -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{what} must be 3-D (C,H,W) or 4-D (N,C,H,W), got shape {x.shape}")


@dataclass
class ConvKernel:
    weights: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got shape {self.weights.shape}")
        k, _, kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias.shape != (k,):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match {k} output channels"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def param_count(self) -> int:
        k, f, kh, kw = self.weights.shape
        return (kh * kw * f + 1) * k


@dataclass
class LinearLayer:
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"linear weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def param_count(self) -> int:
        return (self.n_in + 1) * self.n_out


def _conv_geometry(xb: np.ndarray, kernel: ConvKernel) -> tuple[np.ndarray, int, int]:
    n, c, h, w = xb.shape
    if c != kernel.in_channels:
        raise ShapeError(
            f"input has {c} channels (shape {tuple(xb.shape[1:])}) but kernel expects "
            f"{kernel.in_channels} (weights shape {tuple(kernel.weights.shape)})"
        )
    pad = kernel.padding
    if pad:
        xb = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    kh, kw = kernel.weights.shape[2:]
    h_out = conv_output_size(h, kh, kernel.stride, pad)
    w_out = conv_output_size(w, kw, kernel.stride, pad)
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"input {h}x{w} too small for {kh}x{kw} kernel with stride "
            f"{kernel.stride}, padding {pad}"
        )
    return xb, h_out, w_out


def conv2d(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Cross-correlation with per-output-channel bias."""
    xb, single = _as_batch(x)
    xp, h_out, w_out = _conv_geometry(xb, kernel)
    n = xb.shape[0]
    kh, kw = kernel.weights.shape[2:]
    s = kernel.stride
    out = np.zeros((n, kernel.out_channels, h_out, w_out), dtype=xb.dtype)
    for c in range(kernel.in_channels):
        plane = xp[:, c]
        for u in range(kh):
            for v in range(kw):
                window = plane[:, u : u + h_out * s : s, v : v + w_out * s : s]
                out += window[:, None, :, :] * kernel.weights[None, :, c, u, v, None, None]
    out += kernel.bias[None, :, None, None]
    return out[0] if single else out


def conv2d_grad(
    x: np.ndarray, kernel: ConvKernel, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, weights and bias."""
    xb, single = _as_batch(x)
    upb, _ = _as_batch(upstream, "upstream")
    xp, h_out, w_out = _conv_geometry(xb, kernel)
    n = xb.shape[0]
    expected = (n, kernel.out_channels, h_out, w_out)
    if upb.shape != expected:
        raise ShapeError(f"upstream shape {upb.shape} does not match conv output {expected}")
    kh, kw = kernel.weights.shape[2:]
    s, pad = kernel.stride, kernel.padding
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(kernel.weights, dtype=xb.dtype)
    grad_b = upb.sum(axis=(0, 2, 3))
    for c in range(kernel.in_channels):
        for u in range(kh):
            for v in range(kw):
                window = xp[:, c, u : u + h_out * s : s, v : v + w_out * s : s]
                grad_w[:, c, u, v] = np.tensordot(upb, window, axes=([0, 2, 3], [0, 1, 2]))
                grad_xp[:, c, u : u + h_out * s : s, v : v + w_out * s : s] += np.tensordot(
                    upb, kernel.weights[:, c, u, v].astype(xb.dtype), axes=([1], [0])
                )
    grad_x = grad_xp[:, :, pad : grad_xp.shape[2] - pad, pad : grad_xp.shape[3] - pad] if pad else grad_xp
    if single:
        return grad_x[0], grad_w, grad_b
    return grad_x, grad_w, grad_b


@dataclass
class MaxPoolCache:
    argmax: np.ndarray  # (N,C,Ho,Wo), row-major index within the 2x2 window
    input_shape: tuple
    single: bool


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, MaxPoolCache]:
    """2x2 max pooling, stride 2, no padding. Ties go to the first element
    of the window in row-major order."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise ShapeError(f"spatial extent {h}x{w} too small for 2x2 pooling")
    h_out, w_out = h // 2, w // 2
    windows = (
        xb[:, :, : 2 * h_out, : 2 * w_out]
        .reshape(n, c, h_out, 2, w_out, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h_out, w_out, 4)
    )
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    cache = MaxPoolCache(idx, xb.shape, single)
    return (out[0] if single else out), cache


def maxpool2_grad(cache: MaxPoolCache, upstream: np.ndarray) -> np.ndarray:
    """Route upstream values back to the recorded argmax positions."""
    upb = upstream[None] if cache.single else upstream
    if upb.shape != cache.argmax.shape:
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match pooled shape {cache.argmax.shape}"
        )
    n, c, h, w = cache.input_shape
    h_out, w_out = h // 2, w // 2
    gwin = np.zeros(cache.argmax.shape + (4,), dtype=upb.dtype)
    np.put_along_axis(gwin, cache.argmax[..., None], upb[..., None], axis=-1)
    gx = np.zeros(cache.input_shape, dtype=upb.dtype)
    gx[:, :, : 2 * h_out, : 2 * w_out] = (
        gwin.reshape(n, c, h_out, w_out, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * h_out, 2 * w_out)
    )
    return gx[0] if cache.single else gx


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if x.shape != upstream.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match input {x.shape}")
    return np.where(x > 0, upstream, 0)


def linear(x: np.ndarray, layer: LinearLayer) -> np.ndarray:
    if x.shape[-1] != layer.n_in:
        raise ShapeError(
            f"input length {x.shape[-1]} does not match layer input size {layer.n_in}"
        )
    return x @ layer.weights.T.astype(x.dtype) + layer.bias.astype(x.dtype)


def linear_grad(
    x: np.ndarray, layer: LinearLayer, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if x.shape[-1] != layer.n_in:
        raise ShapeError(
            f"input length {x.shape[-1]} does not match layer input size {layer.n_in}"
        )
    if upstream.shape[-1] != layer.n_out:
        raise ShapeError(
            f"upstream length {upstream.shape[-1]} does not match layer output size {layer.n_out}"
        )
    xb = x[None] if x.ndim == 1 else x
    upb = upstream[None] if upstream.ndim == 1 else upstream
    grad_x = upb @ layer.weights.astype(x.dtype)
    grad_w = upb.T @ xb
    grad_b = upb.sum(axis=0)
    return (grad_x[0] if x.ndim == 1 else grad_x), grad_w, grad_b


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient w.r.t. the logits.

    For a 1-D logit vector `label` is a class index. For a 2-D batch `label`
    is a vector of class indices; the loss is the batch mean and the gradient
    already carries the 1/N factor.
    """
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    if logits.ndim == 1:
        label = int(label)
        if not 0 <= label < logits.shape[0]:
            raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
        grad = np.exp(log_probs)
        grad[label] -= 1.0
        return float(-log_probs[label]), grad
    labels = np.asarray(label)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    loss = -np.mean(log_probs[np.arange(n), labels])
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad


@dataclass
class OptimizerState:
    velocities: list
    learning_rate: float
    momentum: float = 0.9
    decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.decay < 0:
            raise ValueError(f"decay must be non-negative, got {self.decay}")

    @classmethod
    def for_params(cls, params, learning_rate, momentum=0.9, decay=0.0):
        return cls([np.zeros_like(p) for p in params], learning_rate, momentum, decay)


def sgd_momentum_step(params, grads, state: OptimizerState) -> None:
    """In-place update: v <- momentum*v - lr*(g + decay*w); w <- w + v."""
    if not (len(params) == len(grads) == len(state.velocities)):
        raise ShapeError(
            f"got {len(params)} params, {len(grads)} grads, {len(state.velocities)} velocities"
        )
    for w, g, v in zip(params, grads, state.velocities):
        if w.shape != g.shape or w.shape != v.shape:
            raise ShapeError(
                f"param shape {w.shape}, grad shape {g.shape}, velocity shape {v.shape} disagree"
            )
        v *= state.momentum
        v -= state.learning_rate * (g + state.decay * w)
        w += v
