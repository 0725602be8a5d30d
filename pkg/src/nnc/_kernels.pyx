# Compiled layer kernels. Bit-identical to nnc._kernels_py: fixed-point
# accumulates exactly in int64 and wraps to the double-width container,
# float32 applies one rounding per multiply/add in channel-major, tap-minor
# order. Division uses Cython's floor semantics (cdivision stays off).

import numpy as np

cimport numpy as cnp

IMPLEMENTATION = "cython"

ctypedef cnp.int64_t i64
ctypedef cnp.float32_t f32


cdef inline i64 _wrap(i64 v, int bits) noexcept nogil:
    cdef i64 span = (<i64>1) << bits
    cdef i64 half = (<i64>1) << (bits - 1)
    return ((v + half) & (span - 1)) - half


cdef inline i64 _scale_sat(i64 acc, int shift, bint relu, int w) noexcept nogil:
    cdef i64 lo = -((<i64>1) << (w - 1))
    cdef i64 hi = ((<i64>1) << (w - 1)) - 1
    acc = _wrap(acc, 2 * w)
    if shift >= 0:
        acc = acc >> shift
    else:
        acc = _wrap(acc << (-shift), 2 * w)
    if relu and acc < 0:
        acc = 0
    if acc < lo:
        acc = lo
    elif acc > hi:
        acc = hi
    return acc


cdef _container(w):
    return np.int8 if w <= 8 else np.int16


def _out_len(samples, k, stride, pad_left=0, pad_right=0):
    return (samples + pad_left + pad_right - k) // stride + 1


# ---------------------------------------------------------------------------
# float32 kernels
# ---------------------------------------------------------------------------

def conv1d_float(x, kernel, bias, int stride, int pad_left, int pad_right, bint relu):
    cdef f32[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef f32[:, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float32)
    cdef f32[::1] bv = np.ascontiguousarray(bias, dtype=np.float32)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int filters = kv.shape[0], k = kv.shape[2]
    cdef int out_s = _out_len(samples, k, stride, pad_left, pad_right)
    out = np.empty((filters, out_s), dtype=np.float32)
    cdef f32[:, ::1] ov = out
    cdef int f, t, c, kk, p
    cdef f32 acc
    with nogil:
        for f in range(filters):
            for t in range(out_s):
                acc = bv[f]
                for c in range(channels):
                    for kk in range(k):
                        p = t * stride + kk - pad_left
                        if 0 <= p < samples:
                            acc = acc + kv[f, c, kk] * xv[c, p]
                if relu and not acc > 0:
                    acc = 0
                ov[f, t] = acc
    return out


def dense_float(x, kernel, bias, bint relu):
    cdef f32[::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef f32[:, ::1] kv = np.ascontiguousarray(kernel, dtype=np.float32)
    cdef f32[::1] bv = np.ascontiguousarray(bias, dtype=np.float32)
    cdef int units = kv.shape[0], length = kv.shape[1]
    out = np.empty(units, dtype=np.float32)
    cdef f32[::1] ov = out
    cdef int u, i
    cdef f32 acc
    with nogil:
        for u in range(units):
            acc = bv[u]
            for i in range(length):
                acc = acc + kv[u, i] * xv[i]
            if relu and not acc > 0:
                acc = 0
            ov[u] = acc
    return out


def maxpool_float(x, int pool, int stride, bint relu):
    cdef f32[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int out_s = _out_len(samples, pool, stride)
    out = np.empty((channels, out_s), dtype=np.float32)
    cdef f32[:, ::1] ov = out
    cdef int c, t, j
    cdef f32 best, v
    with nogil:
        for c in range(channels):
            for t in range(out_s):
                best = xv[c, t * stride]
                for j in range(1, pool):
                    v = xv[c, t * stride + j]
                    if v > best:
                        best = v
                if relu and not best > 0:
                    best = 0
                ov[c, t] = best
    return out


def avgpool_float(x, int pool, int stride):
    cdef f32[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int out_s = _out_len(samples, pool, stride)
    out = np.empty((channels, out_s), dtype=np.float32)
    cdef f32[:, ::1] ov = out
    cdef int c, t, j
    cdef f32 acc
    with nogil:
        for c in range(channels):
            for t in range(out_s):
                acc = 0
                for j in range(pool):
                    acc = acc + xv[c, t * stride + j]
                ov[c, t] = acc / <f32>pool
    return out


def add_float(stack, bint relu):
    arr = np.ascontiguousarray(np.stack([np.asarray(s, dtype=np.float32) for s in stack]))
    cdef f32[:, :, ::1] sv = arr
    cdef int n = sv.shape[0], channels = sv.shape[1], samples = sv.shape[2]
    out = np.empty((channels, samples), dtype=np.float32)
    cdef f32[:, ::1] ov = out
    cdef int i, c, t
    cdef f32 acc
    with nogil:
        for c in range(channels):
            for t in range(samples):
                acc = 0
                for i in range(n):
                    acc = acc + sv[i, c, t]
                if relu and not acc > 0:
                    acc = 0
                ov[c, t] = acc
    return out


def affine_float(x, scale, offset):
    cdef f32[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef f32[::1] wv = np.ascontiguousarray(scale, dtype=np.float32)
    cdef f32[::1] bv = np.ascontiguousarray(offset, dtype=np.float32)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    out = np.empty((channels, samples), dtype=np.float32)
    cdef f32[:, ::1] ov = out
    cdef int c, t
    cdef f32 acc
    with nogil:
        for c in range(channels):
            for t in range(samples):
                acc = wv[c] * xv[c, t]
                acc = acc + bv[c]
                ov[c, t] = acc
    return out


def relu_float(x):
    return np.maximum(np.asarray(x, dtype=np.float32), np.float32(0.0))


# ---------------------------------------------------------------------------
# fixed-point kernels
# ---------------------------------------------------------------------------

def conv1d_fixed(x, kernel, bias, int stride, int pad_left, int pad_right,
                 bint relu, int shift, int w):
    cdef i64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef i64[:, :, ::1] kv = np.ascontiguousarray(kernel, dtype=np.int64)
    cdef i64[::1] bv = np.ascontiguousarray(bias, dtype=np.int64)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int filters = kv.shape[0], k = kv.shape[2]
    cdef int out_s = _out_len(samples, k, stride, pad_left, pad_right)
    out = np.empty((filters, out_s), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    cdef int f, t, c, kk, p
    cdef i64 acc
    with nogil:
        for f in range(filters):
            for t in range(out_s):
                acc = bv[f]
                for c in range(channels):
                    for kk in range(k):
                        p = t * stride + kk - pad_left
                        if 0 <= p < samples:
                            acc = acc + kv[f, c, kk] * xv[c, p]
                ov[f, t] = _scale_sat(acc, shift, relu, w)
    return out.astype(_container(w))


def dense_fixed(x, kernel, bias, bint relu, int shift, int w):
    cdef i64[::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef i64[:, ::1] kv = np.ascontiguousarray(kernel, dtype=np.int64)
    cdef i64[::1] bv = np.ascontiguousarray(bias, dtype=np.int64)
    cdef int units = kv.shape[0], length = kv.shape[1]
    out = np.empty(units, dtype=np.int64)
    cdef i64[::1] ov = out
    cdef int u, i
    cdef i64 acc
    with nogil:
        for u in range(units):
            acc = bv[u]
            for i in range(length):
                acc = acc + kv[u, i] * xv[i]
            ov[u] = _scale_sat(acc, shift, relu, w)
    return out.astype(_container(w))


def maxpool_fixed(x, int pool, int stride, bint relu):
    cdef i64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int out_s = _out_len(samples, pool, stride)
    out = np.empty((channels, out_s), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    cdef int c, t, j
    cdef i64 best, v
    with nogil:
        for c in range(channels):
            for t in range(out_s):
                best = xv[c, t * stride]
                for j in range(1, pool):
                    v = xv[c, t * stride + j]
                    if v > best:
                        best = v
                if relu and best < 0:
                    best = 0
                ov[c, t] = best
    return out.astype(np.asarray(x).dtype)


def avgpool_fixed(x, int pool, int stride, int w):
    cdef i64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    cdef int out_s = _out_len(samples, pool, stride)
    out = np.empty((channels, out_s), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    cdef int c, t, j
    cdef i64 acc, lo, hi
    lo = -((<i64>1) << (w - 1))
    hi = ((<i64>1) << (w - 1)) - 1
    with nogil:
        for c in range(channels):
            for t in range(out_s):
                acc = 0
                for j in range(pool):
                    acc = acc + xv[c, t * stride + j]
                acc = _wrap(acc, 2 * w)
                acc = acc // pool
                if acc < lo:
                    acc = lo
                elif acc > hi:
                    acc = hi
                ov[c, t] = acc
    return out.astype(_container(w))


def add_fixed(stack, shifts, bint relu, int w):
    arr = np.ascontiguousarray(np.stack([np.asarray(s, dtype=np.int64) for s in stack]))
    cdef i64[:, :, ::1] sv = arr
    sh = np.ascontiguousarray(np.asarray(shifts, dtype=np.int64))
    cdef i64[::1] shv = sh
    cdef int n = sv.shape[0], channels = sv.shape[1], samples = sv.shape[2]
    out = np.empty((channels, samples), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    cdef int i, c, t
    cdef i64 acc, term, lo, hi
    lo = -((<i64>1) << (w - 1))
    hi = ((<i64>1) << (w - 1)) - 1
    with nogil:
        for c in range(channels):
            for t in range(samples):
                acc = 0
                for i in range(n):
                    term = sv[i, c, t]
                    if shv[i] >= 0:
                        term = term >> shv[i]
                    else:
                        term = _wrap(term << (-shv[i]), 2 * w)
                    acc = acc + term
                acc = _wrap(acc, 2 * w)
                if relu and acc < 0:
                    acc = 0
                if acc < lo:
                    acc = lo
                elif acc > hi:
                    acc = hi
                ov[c, t] = acc
    return out.astype(_container(w))


def affine_fixed(x, scale, offset, int shift, int w):
    cdef i64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.int64)
    cdef i64[::1] wv = np.ascontiguousarray(scale, dtype=np.int64)
    cdef i64[::1] bv = np.ascontiguousarray(offset, dtype=np.int64)
    cdef int channels = xv.shape[0], samples = xv.shape[1]
    out = np.empty((channels, samples), dtype=np.int64)
    cdef i64[:, ::1] ov = out
    cdef int c, t
    cdef i64 acc
    with nogil:
        for c in range(channels):
            for t in range(samples):
                acc = bv[c] + wv[c] * xv[c, t]
                ov[c, t] = _scale_sat(acc, shift, False, w)
    return out.astype(_container(w))


def relu_fixed(x):
    x = np.asarray(x)
    return np.maximum(x, np.array(0, dtype=x.dtype))
