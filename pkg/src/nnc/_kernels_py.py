"""Pure-Python/numpy layer kernels.

Fallback for the compiled extension, selected in nnc.kernels. Both
implementations are required to be bit-identical:

* fixed-point: accumulation is exact in int64, then wrapped to the
  double-width container (two's complement), shifted arithmetically and
  saturated - the same value sequence a C accumulator produces;
* float: binary32 with one rounding per multiply and per add, applied in
  the same order as the generated C loops (channel-major, then tap).
  Vectorisation here runs across independent accumulators only, so each
  accumulator sees the identical op sequence.
"""

from __future__ import annotations

import numpy as np

from .fxp import container_dtype, int_bounds, wrap_to_bits

IMPLEMENTATION = "python"

F32_ZERO = np.float32(0.0)


def _out_len(samples: int, k: int, stride: int, pad_left: int = 0, pad_right: int = 0) -> int:
    return (samples + pad_left + pad_right - k) // stride + 1


def _valid_t_range(k_off: int, pad_left: int, stride: int, samples: int, out_s: int):
    """Output positions whose tap `k_off` falls inside the unpadded input."""
    # position p = t*stride + k_off - pad_left must satisfy 0 <= p < samples
    t_lo = max(0, -(-(pad_left - k_off) // stride))
    t_hi = min(out_s - 1, (samples - 1 + pad_left - k_off) // stride)
    return t_lo, t_hi


# ---------------------------------------------------------------------------
# float32 kernels
# ---------------------------------------------------------------------------

def conv1d_float(x, kernel, bias, stride, pad_left, pad_right, relu):
    channels, samples = x.shape
    filters, _, k = kernel.shape
    out_s = _out_len(samples, k, stride, pad_left, pad_right)
    acc = np.repeat(bias[:, None], out_s, axis=1)
    for c in range(channels):
        for kk in range(k):
            t_lo, t_hi = _valid_t_range(kk, pad_left, stride, samples, out_s)
            if t_lo > t_hi:
                continue
            p_lo = t_lo * stride + kk - pad_left
            window = x[c, p_lo : p_lo + (t_hi - t_lo) * stride + 1 : stride]
            acc[:, t_lo : t_hi + 1] = acc[:, t_lo : t_hi + 1] + kernel[:, c, kk, None] * window
    if relu:
        acc = np.maximum(acc, F32_ZERO)
    return acc


def dense_float(x, kernel, bias, relu):
    acc = bias.copy()
    for i in range(x.shape[0]):
        acc = acc + kernel[:, i] * x[i]
    if relu:
        acc = np.maximum(acc, F32_ZERO)
    return acc


def maxpool_float(x, pool, stride, relu):
    windows = np.lib.stride_tricks.sliding_window_view(x, pool, axis=1)[:, ::stride, :]
    out = windows.max(axis=2)
    if relu:
        out = np.maximum(out, F32_ZERO)
    return out


def avgpool_float(x, pool, stride):
    channels, samples = x.shape
    out_s = _out_len(samples, pool, stride)
    acc = np.zeros((channels, out_s), dtype=np.float32)
    for j in range(pool):
        acc = acc + x[:, j : j + (out_s - 1) * stride + 1 : stride]
    return acc / np.float32(pool)


def add_float(stack, relu):
    acc = np.zeros_like(stack[0])
    for operand in stack:
        acc = acc + operand
    if relu:
        acc = np.maximum(acc, F32_ZERO)
    return acc


def affine_float(x, scale, offset):
    return scale[:, None] * x + offset[:, None]


def relu_float(x):
    return np.maximum(x, F32_ZERO)


# ---------------------------------------------------------------------------
# fixed-point kernels
# ---------------------------------------------------------------------------

def _finish_fixed(acc, shift, relu, w):
    """Wrap to the 2w accumulator, scale by 2**-shift, ReLU, saturate to w bits."""
    acc = wrap_to_bits(acc, 2 * w)
    if shift >= 0:
        acc = acc >> shift
    else:
        acc = wrap_to_bits(acc << -shift, 2 * w)
    if relu:
        acc = np.maximum(acc, 0)
    lo, hi = int_bounds(w)
    return np.clip(acc, lo, hi).astype(container_dtype(w))


def conv1d_fixed(x, kernel, bias, stride, pad_left, pad_right, relu, shift, w):
    channels, samples = x.shape
    filters, _, k = kernel.shape
    out_s = _out_len(samples, k, stride, pad_left, pad_right)
    acc = np.repeat(bias.astype(np.int64)[:, None], out_s, axis=1)
    x64 = x.astype(np.int64)
    k64 = kernel.astype(np.int64)
    for c in range(channels):
        for kk in range(k):
            t_lo, t_hi = _valid_t_range(kk, pad_left, stride, samples, out_s)
            if t_lo > t_hi:
                continue
            p_lo = t_lo * stride + kk - pad_left
            window = x64[c, p_lo : p_lo + (t_hi - t_lo) * stride + 1 : stride]
            acc[:, t_lo : t_hi + 1] += k64[:, c, kk, None] * window
    return _finish_fixed(acc, shift, relu, w)


def dense_fixed(x, kernel, bias, relu, shift, w):
    acc = bias.astype(np.int64) + kernel.astype(np.int64) @ x.astype(np.int64)
    return _finish_fixed(acc, shift, relu, w)


def maxpool_fixed(x, pool, stride, relu):
    windows = np.lib.stride_tricks.sliding_window_view(x, pool, axis=1)[:, ::stride, :]
    out = windows.max(axis=2)
    if relu:
        out = np.maximum(out, np.array(0, dtype=x.dtype))
    return out


def avgpool_fixed(x, pool, stride, w):
    channels, samples = x.shape
    out_s = _out_len(samples, pool, stride)
    acc = np.zeros((channels, out_s), dtype=np.int64)
    x64 = x.astype(np.int64)
    for j in range(pool):
        acc += x64[:, j : j + (out_s - 1) * stride + 1 : stride]
    acc = wrap_to_bits(acc, 2 * w)
    acc = np.floor_divide(acc, pool)
    lo, hi = int_bounds(w)
    return np.clip(acc, lo, hi).astype(container_dtype(w))


def add_fixed(stack, shifts, relu, w):
    acc = np.zeros(stack[0].shape, dtype=np.int64)
    for operand, shift in zip(stack, shifts):
        term = operand.astype(np.int64)
        if shift >= 0:
            term = term >> shift
        else:
            term = wrap_to_bits(term << -shift, 2 * w)
        acc += term
    acc = wrap_to_bits(acc, 2 * w)
    if relu:
        acc = np.maximum(acc, 0)
    lo, hi = int_bounds(w)
    return np.clip(acc, lo, hi).astype(container_dtype(w))


def affine_fixed(x, scale, offset, shift, w):
    acc = offset.astype(np.int64)[:, None] + scale.astype(np.int64)[:, None] * x.astype(np.int64)
    return _finish_fixed(acc, shift, False, w)


def relu_fixed(x):
    return np.maximum(x, np.array(0, dtype=x.dtype))
