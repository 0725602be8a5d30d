"""Kernel implementation selection.

Prefers the compiled extension; falls back to the numpy implementation
when the extension is missing (source checkout without a build) or when
NNC_PURE_PYTHON=1 is set. Both implementations are bit-identical; the
benchmark under benchmarks/ compares their speed.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("NNC_PURE_PYTHON") == "1":
    impl = _kernels_py
else:
    try:
        from . import _kernels as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _kernels_py

IMPLEMENTATION = impl.IMPLEMENTATION

conv1d_float = impl.conv1d_float
dense_float = impl.dense_float
maxpool_float = impl.maxpool_float
avgpool_float = impl.avgpool_float
add_float = impl.add_float
affine_float = impl.affine_float
relu_float = impl.relu_float

conv1d_fixed = impl.conv1d_fixed
dense_fixed = impl.dense_fixed
maxpool_fixed = impl.maxpool_fixed
avgpool_fixed = impl.avgpool_fixed
add_fixed = impl.add_fixed
affine_fixed = impl.affine_fixed
relu_fixed = impl.relu_fixed
