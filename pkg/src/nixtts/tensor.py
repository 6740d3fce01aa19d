"""Deterministic numpy kernels shared by every network in the package.

Tensors are plain ``numpy.ndarray`` objects stored as float32 with the
layout ``[batch, channels, time]``. Every kernel accumulates in float64 and
casts the result back to float32.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "ConfigError",
    "Conv1dSpec",
    "conv1d",
    "depthwise_separable_conv1d",
    "transposed_conv1d",
    "conv_output_length",
    "transposed_output_length",
    "same_padding",
    "silu",
    "leaky_relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "positional_encoding",
    "set_num_threads",
    "get_num_threads",
]

ACC = np.float64
STORE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with a kernel."""


class ConfigError(ValueError):
    """Raised for invalid hyperparameters."""


_THREADS = {"n": 1}


def set_num_threads(n: int) -> None:
    """Set the number of worker threads used by batch-parallel kernels.

    BLAS is limited to the same count so ``n = 1`` means strictly single
    threaded execution.
    """
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    _THREADS["n"] = int(n)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=int(n))
    except ImportError:  # pragma: no cover
        os.environ["OPENBLAS_NUM_THREADS"] = str(n)


def get_num_threads() -> int:
    return _THREADS["n"]


def _map_batch(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, workers: Optional[int]) -> np.ndarray:
    # Each batch item is computed by the same per-item routine in both modes,
    # so sequential and parallel results are bit-identical.
    workers = get_num_threads() if workers is None else workers
    if x.shape[0] == 1:
        return fn(x[0])[None]
    if workers <= 1:
        return np.stack([fn(x[b]) for b in range(x.shape[0])])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.stack(list(pool.map(fn, [x[b] for b in range(x.shape[0])])))


@dataclass
class Conv1dSpec:
    """Weights and geometry of a 1-D convolution.

    For an ordinary convolution ``weight`` has shape
    ``[out_channels, in_channels // groups, kernel_size]``. A separable
    convolution stores the depthwise filter ``[in_channels, 1, kernel_size]``
    in ``weight`` and the 1x1 channel mixer ``[out_channels, in_channels, 1]``
    in ``pointwise``. For transposed convolutions ``weight`` follows the
    ``[in_channels, out_channels, kernel_size]`` convention.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1
    pointwise: Optional[np.ndarray] = None
    pointwise_bias: Optional[np.ndarray] = None

    @property
    def separable(self) -> bool:
        return self.pointwise is not None

    @property
    def kernel_size(self) -> int:
        return int(self.weight.shape[-1])

    @property
    def in_channels(self) -> int:
        if self.separable:
            return int(self.weight.shape[0])
        return int(self.weight.shape[1] * self.groups)

    @property
    def out_channels(self) -> int:
        if self.separable:
            return int(self.pointwise.shape[0])
        return int(self.weight.shape[0])

    def num_parameters(self) -> int:
        n = self.weight.size
        for t in (self.bias, self.pointwise, self.pointwise_bias):
            if t is not None:
                n += t.size
        return int(n)

    def depthwise_stage(self) -> "Conv1dSpec":
        c = self.weight.shape[0]
        return Conv1dSpec(self.weight, self.bias, self.stride, self.dilation, self.padding, groups=c)

    def pointwise_stage(self) -> "Conv1dSpec":
        return Conv1dSpec(self.pointwise, self.pointwise_bias)


def conv_output_length(t_in: int, kernel_size: int, stride: int = 1, dilation: int = 1, padding: int = 0) -> int:
    return (t_in + 2 * padding - dilation * (kernel_size - 1) - 1) // stride + 1


def transposed_output_length(t_in: int, kernel_size: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (t_in - 1) * stride - 2 * padding + dilation * (kernel_size - 1) + 1


def same_padding(kernel_size: int, dilation: int = 1) -> int:
    if kernel_size % 2 == 0:
        raise ConfigError(f"'same' padding needs an odd kernel, got {kernel_size}")
    return dilation * (kernel_size - 1) // 2


def _check_input(x: np.ndarray, in_channels: int) -> None:
    if x.ndim != 3:
        raise ShapeError(f"expected rank-3 input [B, C, T], got shape {x.shape}")
    if x.shape[1] != in_channels:
        raise ShapeError(f"input shape {x.shape} does not match kernel with {in_channels} input channels")


def _dense_single(x: np.ndarray, w: np.ndarray, b, stride: int, dilation: int, padding: int) -> np.ndarray:
    c_out, c_in, k = w.shape
    x = x.astype(ACC)
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding)))
    t_out = conv_output_length(x.shape[-1], k, stride, dilation)
    if t_out < 1:
        raise ShapeError(f"input length {x.shape[-1]} too short for kernel {k} with dilation {dilation}")
    w2 = w.reshape(c_out, c_in * k).astype(ACC)
    if k == 1:
        cols = x[:, : stride * (t_out - 1) + 1 : stride]
    else:
        span = dilation * (k - 1) + 1
        win = sliding_window_view(x, span, axis=-1)[:, : stride * (t_out - 1) + 1 : stride, ::dilation]
        # [C, T_out, K] -> [C, K, T_out] so rows match the weight layout
        cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_in * k, t_out)
    y = w2 @ cols
    if b is not None:
        y += b.astype(ACC)[:, None]
    return y.astype(STORE)


@njit(cache=True)
def _axpy(acc, a, x):
    for t in range(acc.shape[0]):
        acc[t] += a * x[t]


@njit(cache=True)
def _depthwise_kernel(x, w, b, stride, dilation, padding, t_out):
    # x: float32 [C, T] unpadded; zero padding is handled by clipping the
    # range of each tap. Accumulates in float64, stores float32.
    c, k = w.shape
    t_in = x.shape[1]
    y = np.empty((c, t_out), dtype=np.float32)
    acc = np.empty(t_out)
    for ci in range(c):
        acc[:] = 0.0
        xr = x[ci]
        for i in range(k):
            wi = w[ci, i]
            off = i * dilation - padding
            # valid t: 0 <= t * stride + off < t_in
            lo = 0
            if off < 0:
                lo = (-off + stride - 1) // stride
            hi = t_out
            if (t_out - 1) * stride + off >= t_in:
                hi = (t_in - 1 - off) // stride + 1
            if hi <= lo:
                continue
            if stride == 1:
                # contiguous slices let LLVM vectorize the update
                _axpy(acc[lo:hi], wi, xr[lo + off : hi + off])
            else:
                for t in range(lo, hi):
                    acc[t] += wi * xr[t * stride + off]
        bc = b[ci]
        for t in range(t_out):
            y[ci, t] = acc[t] + bc
    return y


def _depthwise_single(x: np.ndarray, w: np.ndarray, b, stride: int, dilation: int, padding: int) -> np.ndarray:
    k = w.shape[-1]
    t_out = conv_output_length(x.shape[-1], k, stride, dilation, padding)
    if t_out < 1:
        raise ShapeError(f"input length {x.shape[-1]} too short for kernel {k} with dilation {dilation}")
    bias = np.zeros(w.shape[0]) if b is None else b.astype(ACC)
    return _depthwise_kernel(
        np.ascontiguousarray(x, dtype=STORE),
        np.ascontiguousarray(w[:, 0, :], dtype=ACC),
        bias,
        stride,
        dilation,
        padding,
        t_out,
    )


def conv1d(x: np.ndarray, spec: Conv1dSpec, workers: Optional[int] = None) -> np.ndarray:
    """Cross-correlate ``x`` ([B, C_in, T]) with ``spec``.

    Separable specs are dispatched to :func:`depthwise_separable_conv1d`.
    Supported groupings are ``groups == 1`` and depthwise
    (``groups == in_channels == out_channels``).
    """
    if spec.separable:
        return depthwise_separable_conv1d(x, spec, workers)
    _check_input(x, spec.in_channels)
    w, b = spec.weight, spec.bias
    if spec.groups == 1:
        fn = lambda xb: _dense_single(xb, w, b, spec.stride, spec.dilation, spec.padding)  # noqa: E731
    elif spec.groups == spec.in_channels == spec.out_channels:
        fn = lambda xb: _depthwise_single(xb, w, b, spec.stride, spec.dilation, spec.padding)  # noqa: E731
    else:
        raise ConfigError(f"unsupported groups={spec.groups} for weight {w.shape}")
    return _map_batch(fn, x, workers)


def depthwise_separable_conv1d(x: np.ndarray, spec: Conv1dSpec, workers: Optional[int] = None) -> np.ndarray:
    """Depthwise conv followed by a 1x1 pointwise conv.

    The intermediate activation is stored as float32, exactly as if the two
    stages were called one after the other through :func:`conv1d`.
    """
    if not spec.separable:
        raise ConfigError("depthwise_separable_conv1d requires a spec with pointwise weights")
    if spec.weight.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be [C, 1, K], got {spec.weight.shape}")
    if spec.pointwise.shape[1:] != (spec.weight.shape[0], 1):
        raise ShapeError(
            f"pointwise weight {spec.pointwise.shape} incompatible with depthwise weight {spec.weight.shape}"
        )
    h = conv1d(x, spec.depthwise_stage(), workers)
    return conv1d(h, spec.pointwise_stage(), workers)


def _transposed_single(x: np.ndarray, w: np.ndarray, b, stride: int, dilation: int, padding: int) -> np.ndarray:
    c_in, c_out, k = w.shape
    t_in = x.shape[-1]
    full = (t_in - 1) * stride + dilation * (k - 1) + 1
    # cols[o, i, t] = sum_c w[c, o, i] * x[c, t]
    cols = (w.reshape(c_in, c_out * k).astype(ACC).T @ x.astype(ACC)).reshape(c_out, k, t_in)
    y = np.zeros((c_out, full), dtype=ACC)
    stop = stride * (t_in - 1) + 1
    for i in range(k):
        off = i * dilation
        y[:, off : off + stop : stride] += cols[:, i, :]
    if padding:
        y = y[:, padding : full - padding]
    if b is not None:
        y += b.astype(ACC)[:, None]
    return y.astype(STORE)


def transposed_conv1d(x: np.ndarray, spec: Conv1dSpec, workers: Optional[int] = None) -> np.ndarray:
    """Transposed convolution (the adjoint of :func:`conv1d`).

    ``spec.weight`` is ``[in_channels, out_channels, kernel_size]``. Output
    length is ``(T - 1) * stride - 2 * padding + dilation * (K - 1) + 1``.
    """
    if x.ndim != 3:
        raise ShapeError(f"expected rank-3 input [B, C, T], got shape {x.shape}")
    w = spec.weight
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"input shape {x.shape} does not match transposed weight {w.shape}")
    if transposed_output_length(x.shape[-1], w.shape[-1], spec.stride, spec.padding, spec.dilation) < 1:
        raise ShapeError(f"padding {spec.padding} leaves no output for input shape {x.shape}")
    fn = lambda xb: _transposed_single(xb, w, spec.bias, spec.stride, spec.dilation, spec.padding)  # noqa: E731
    return _map_batch(fn, x, workers)


def silu(x: np.ndarray) -> np.ndarray:
    xa = x.astype(ACC)
    # x * sigmoid(x) written to stay finite for large |x|
    return (xa * 0.5 * (1.0 + np.tanh(0.5 * xa))).astype(STORE)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    x = np.asarray(x, dtype=STORE)
    scaled = x * STORE(slope)
    if 0.0 <= slope <= 1.0:
        return np.maximum(x, scaled)
    return np.where(x >= 0, x, scaled)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted log-softmax, returned in float64."""
    xa = np.asarray(x, dtype=ACC)
    m = np.max(xa, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = xa - m
    return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    xa = np.asarray(x, dtype=ACC)
    s = np.exp(xa - np.max(xa, axis=axis, keepdims=True))
    return (s / np.sum(s, axis=axis, keepdims=True)).astype(STORE)


def layer_norm(
    x: np.ndarray,
    gain: Optional[np.ndarray] = None,
    bias: Optional[np.ndarray] = None,
    axis: int = 1,
    eps: float = 1e-8,
) -> np.ndarray:
    """Normalize over ``axis`` (channels by default) then apply gain/bias."""
    xa = x.astype(ACC)
    mean = xa.mean(axis=axis, keepdims=True)
    var = ((xa - mean) ** 2).mean(axis=axis, keepdims=True)
    y = (xa - mean) / np.sqrt(var + eps)
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    if gain is not None:
        y = y * gain.astype(ACC).reshape(shape)
    if bias is not None:
        y = y + bias.astype(ACC).reshape(shape)
    return y.astype(STORE)


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal table of shape ``[length, dim]``."""
    if dim <= 0 or dim % 2:
        raise ConfigError(f"positional encoding dim must be a positive even number, got {dim}")
    pos = np.arange(length, dtype=ACC)[:, None]
    i = np.arange(0, dim, 2, dtype=ACC)
    angle = pos / np.power(10000.0, i / dim)
    pe = np.empty((length, dim), dtype=ACC)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(STORE)
