import numpy as np
import pytest

from pvfaultnet.nn import ConvKernel


def naive_conv2d(x, kernel):
    """Scalar nested-loop cross-correlation oracle. Accumulates per output
    element in (channel, row, col) tap order, bias added last."""
    k_out, c_in, kh, kw = kernel.weights.shape
    s, pad = kernel.stride, kernel.padding
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    c, h, w = x.shape
    h_out = (h - kh) // s + 1
    w_out = (w - kw) // s + 1
    out = np.empty((k_out, h_out, w_out), dtype=x.dtype)
    for k in range(k_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for ci in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[ci, i * s + u, j * s + v] * kernel.weights[k, ci, u, v]
                out[k, i, j] = acc + kernel.bias[k]
    return out


def numeric_grad(f, x, eps=1e-6):
    """Central finite differences of a scalar function over every element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_kernel(rng, k_out, c_in, ksize=3, dtype=np.float64, stride=1, padding=0):
    return ConvKernel(
        rng.standard_normal((k_out, c_in, ksize, ksize)).astype(dtype),
        rng.standard_normal(k_out).astype(dtype),
        stride,
        padding,
    )
