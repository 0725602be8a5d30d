"""Fixed-point compiler for small 1D convolutional and residual networks.

Pipeline: load or build a model graph, simplify it (padding/BatchNorm/ReLU
folding), derive Qm.n formats and integer weights, plan static buffers,
then either interpret the model (float, fake-quantized or bit-exact
fixed-point) or emit a self-contained C99 inference library.
"""

from .allocator import plan_buffers, ram_bytes
from .codegen import SourceBundle, emit, render_harness
from .costmodel import CostReport, OpCounts, cost_report, estimate_cycles, rom_bytes
from .fxp import FixedTensor, QFormat, dequantize, quantize_value, requantize
from .interpreter import evaluate, run_fixed, run_float, run_instrumented
from .ir import Graph, LayerNode, Shape, infer_shapes, topo_order, validate
from .model_io import load_model, save_model
from .quantizer import (
    CalibrationStats,
    QuantizationScheme,
    QuantizedModel,
    calibrate,
    fake_quantize_forward,
    frac_bits_for,
    quantize_input,
    quantize_model,
)
from .templates import build_cnn, build_mlp, build_resnet_v1_6
from .transforms import run_pipeline

__version__ = "0.1.0"

__all__ = [
    "CalibrationStats",
    "CostReport",
    "FixedTensor",
    "Graph",
    "LayerNode",
    "OpCounts",
    "QFormat",
    "QuantizationScheme",
    "QuantizedModel",
    "Shape",
    "SourceBundle",
    "build_cnn",
    "build_mlp",
    "build_resnet_v1_6",
    "calibrate",
    "cost_report",
    "dequantize",
    "emit",
    "estimate_cycles",
    "evaluate",
    "fake_quantize_forward",
    "frac_bits_for",
    "infer_shapes",
    "load_model",
    "plan_buffers",
    "quantize_input",
    "quantize_model",
    "quantize_value",
    "ram_bytes",
    "render_harness",
    "requantize",
    "rom_bytes",
    "run_fixed",
    "run_float",
    "run_instrumented",
    "run_pipeline",
    "save_model",
    "topo_order",
    "validate",
]
