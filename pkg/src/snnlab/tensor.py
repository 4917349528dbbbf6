"""Dense float64 tensor kernels for the convolutional and fully connected layers.

Tensors are plain ``numpy`` arrays of dtype float64 in row-major layout. Every
kernel accepts either a single sample or a batch with a leading sample axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not agree."""


class GeometryError(ValueError):
    """Convolution geometry produces an empty output."""


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise GeometryError(f"padding must be >= 0, got {padding}")
    out = (size + 2 * padding - k) // stride + 1
    if k > size + 2 * padding or out < 1:
        raise GeometryError(
            f"kernel {k} does not fit input {size} with padding {padding}")
    return out


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, H, W) -> (N, H', W', C*k*k) receptive-field matrix."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # N, C, Hp-k+1, Wp-k+1, k, k
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * k * k)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation.

    ``x`` is ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``kernel`` is
    ``[C_out, C_in, k, k]``. Returns ``[(N,) C_out, H', W']``.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 3/4-D input and 4-D kernel, got {x.shape}, {kernel.shape}")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got {k}x{k2}")
    if x.shape[1] != c_in:
        raise ShapeError(f"kernel expects {c_in} input channels, input has {x.shape[1]}")
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    cols = _im2col(x, k, stride, padding)
    out = cols.reshape(-1, c_in * k * k) @ kernel.reshape(c_out, -1).T
    out = out.reshape(x.shape[0], ho, wo, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x, kernel, grad_out, stride: int = 1, padding: int = 0):
    """Gradients of ``conv2d`` w.r.t. its input and kernel.

    All arguments batched (``[N, ...]``). Returns ``(grad_x, grad_kernel)``.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    grad_out = as_tensor(grad_out)
    n, c_in, h, w = x.shape
    c_out, _, k, _ = kernel.shape
    ho, wo = grad_out.shape[2:]
    cols = _im2col(x, k, stride, padding).reshape(-1, c_in * k * k)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_kernel = (g.T @ cols).reshape(kernel.shape)

    gcols = (g @ kernel.reshape(c_out, -1)).reshape(n, ho, wo, c_in, k, k)
    hp, wp = h + 2 * padding, w + 2 * padding
    gx = np.zeros((n, c_in, hp, wp))
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gx), grad_kernel


def linear(x, weight, bias=None) -> np.ndarray:
    """``out[j] = sum_i weight[j, i] * x[i] (+ bias[j])`` for ``[N_in]`` or ``[B, N_in]`` input."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: weight {weight.shape} incompatible with input {x.shape}")
    out = x @ weight.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match {weight.shape[0]} outputs")
        out = out + bias
    return out


def linear_backward(x, weight, grad_out):
    """Returns ``(grad_x, grad_weight)`` for a batched bias-free ``linear``."""
    return grad_out @ weight, grad_out.T @ x
