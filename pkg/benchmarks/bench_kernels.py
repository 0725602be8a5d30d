#!/usr/bin/env python3
"""Compare the compiled kernel extension against the pure-Python fallback.

Times full forward passes (float32 and 16-bit fixed point) of the
six-layer residual template at a few widths, plus the raw convolution
kernel. Run after `pip install -e . --no-build-isolation` so the
extension exists:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from nnc import _kernels_py
from nnc.ir import Shape, infer_shapes
from nnc.quantizer import QuantizationScheme, calibrate, quantize_input, quantize_model
from nnc.templates import build_resnet_v1_6
from nnc.transforms import run_pipeline

try:
    from nnc import _kernels
except ImportError:
    _kernels = None


def timeit(fn, min_time=0.4):
    fn()  # warmup
    start = time.perf_counter()
    runs = 0
    while time.perf_counter() - start < min_time:
        fn()
        runs += 1
    return (time.perf_counter() - start) / runs


def swap_impl(module):
    from nnc import kernels

    for name in (
        "conv1d_float", "dense_float", "maxpool_float", "avgpool_float",
        "add_float", "affine_float", "relu_float",
        "conv1d_fixed", "dense_fixed", "maxpool_fixed", "avgpool_fixed",
        "add_fixed", "affine_fixed", "relu_fixed",
    ):
        setattr(kernels, name, getattr(module, name))


def bench_forward(filters):
    from nnc import interpreter

    g = run_pipeline(build_resnet_v1_6(filters, Shape(9, 128), 6))
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (9, 128))
    stats = calibrate(g, [x])
    qm = quantize_model(g, QuantizationScheme.per_network(16, 9), stats)
    ft = quantize_input(qm, x)

    rows = []
    for label, module in (("python", _kernels_py), ("cython", _kernels)):
        if module is None:
            continue
        swap_impl(module)
        t_float = timeit(lambda: interpreter.run_float(g, x))
        t_fixed = timeit(lambda: interpreter.run_fixed(qm, ft))
        rows.append((label, t_float, t_fixed))
    return rows


def bench_raw_conv():
    rng = np.random.default_rng(1)
    x = rng.integers(-128, 128, (9, 128)).astype(np.int16)
    kern = rng.integers(-128, 128, (16, 9, 3)).astype(np.int16)
    bias = rng.integers(-1000, 1000, 16).astype(np.int32)
    rows = []
    for label, module in (("python", _kernels_py), ("cython", _kernels)):
        if module is None:
            continue
        t = timeit(lambda: module.conv1d_fixed(x, kern, bias, 1, 1, 1, True, 9, 16))
        rows.append((label, t))
    return rows


def main():
    if _kernels is None:
        print("compiled extension not available; showing fallback only")

    print("raw conv1d_fixed (16 filters, 9x128 input, k=3):")
    base = None
    for label, t in bench_raw_conv():
        base = base or t
        print(f"  {label:<8} {t * 1e6:9.1f} us   x{base / t:5.1f}")

    for filters in (8, 16, 32):
        print(f"\nresidual template forward, {filters} filters:")
        rows = bench_forward(filters)
        base_float = rows[0][1]
        base_fixed = rows[0][2]
        for label, t_float, t_fixed in rows:
            print(
                f"  {label:<8} float {t_float * 1e3:8.2f} ms (x{base_float / t_float:5.1f})"
                f"   fixed {t_fixed * 1e3:8.2f} ms (x{base_fixed / t_fixed:5.1f})"
            )


if __name__ == "__main__":
    main()
