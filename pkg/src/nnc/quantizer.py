"""Post-training quantization.

Format selection: a value range with max |x| in [2**(m-1), 2**m) needs m
magnitude bits, leaving n = w - m - 1 fractional bits in a w-bit word.
m comes from frexp, which is exact where a floating log2-plus-floor is
not. A max sitting exactly on a power of two keeps the formula's m and
therefore saturates by one step when quantized; that bias is accepted.

Weights use per-layer ranges (or one network-wide n). Activation ranges
come from a calibration run over representative inputs, or from a manual
override. Biases are stored at weight_frac + input_frac in the
double-width container, which is the scale the accumulator already has,
so adding them costs no runtime shift and loses no precision.

All-zero ranges get n = w - 1: zero is exact in every format and the
maximum fraction preserves the most downstream precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import interpreter
from .errors import AllZeroRange, FormatMismatch, MissingStats, UnsupportedLayer
from .fxp import (
    FixedTensor,
    QFormat,
    int_bounds,
    quantize_array,
    quantize_wide_array,
)
from .ir import Graph, infer_shapes, topo_order

# Kinds that forward their input values untouched (or subset them), so
# their output keeps the producer's format and is never requantized.
PASSTHROUGH_KINDS = ("MaxPool1D", "AvgPool1D", "ReLU", "Flatten", "SoftMax")

# Kinds that must have been rewritten away before quantization.
_UNTRANSFORMED_KINDS = ("ZeroPad1D", "BatchNorm")


@dataclass(frozen=True)
class QuantizationScheme:
    width: int
    policy: str  # "per_network" | "per_layer"
    network_frac: int | None = None
    activation_source: str = "calibration"  # "calibration" | "manual"
    manual_frac: int | dict | None = None

    @classmethod
    def per_network(cls, width: int, frac: int) -> "QuantizationScheme":
        return cls(width=width, policy="per_network", network_frac=frac)

    @classmethod
    def per_layer(cls, width: int, manual_frac=None) -> "QuantizationScheme":
        if manual_frac is None:
            return cls(width=width, policy="per_layer")
        return cls(
            width=width,
            policy="per_layer",
            activation_source="manual",
            manual_frac=manual_frac,
        )


@dataclass(frozen=True)
class LayerQuantInfo:
    input_frac: int
    output_frac: int
    weight_frac: int | None = None
    bias_frac: int | None = None

    def __post_init__(self):
        if self.bias_frac is not None and self.bias_frac != self.weight_frac + self.input_frac:
            raise ValueError("bias_frac must equal weight_frac + input_frac")


@dataclass(frozen=True)
class CalibrationStats:
    max_abs: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class QuantizedModel:
    graph: Graph
    width: int
    quant: dict[str, LayerQuantInfo]
    weights: dict[str, FixedTensor]
    biases: dict[str, np.ndarray]

    @property
    def input_format(self) -> QFormat:
        return QFormat(self.width, self.quant[self.graph.input_id].output_frac)

    @property
    def output_format(self) -> QFormat:
        return QFormat(self.width, self.quant[self.graph.output].output_frac)


def frac_bits_for(values, w: int) -> int:
    """Fractional bits so the largest magnitude in `values` fits a w-bit word."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise AllZeroRange("empty value range")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    max_abs = float(np.max(np.abs(arr)))
    if max_abs == 0.0:
        raise AllZeroRange("all values are zero")
    m = math.frexp(max_abs)[1]  # exact 1 + floor(log2(max_abs))
    return w - m - 1


def _frac_or_default(values, w: int) -> int:
    try:
        return frac_bits_for(values, w)
    except AllZeroRange:
        return w - 1


def derive_network_frac(graph: Graph, stats: CalibrationStats, w: int) -> int:
    """Whole-network fractional bits: the single n that fits the coarsest
    range across every weight tensor and calibrated activation.

    In this mode every requantization shift equals n, which stays within
    the double-width accumulator whenever the network's peak magnitude is
    at least 0.5, so no layer can overflow on calibrated data.
    """
    peak = 0.0
    for node in graph.nodes.values():
        for key in ("kernel", "scale"):
            if key in node.weights and node.weights[key].size:
                peak = max(peak, float(np.max(np.abs(node.weights[key]))))
    for value in stats.max_abs.values():
        peak = max(peak, float(value))
    if peak == 0.0:
        return w - 1
    return frac_bits_for([peak], w)


def calibrate(graph: Graph, samples) -> CalibrationStats:
    """Per-node max |activation| over the sample set, Input node included."""
    max_abs: dict[str, float] = {}
    for sample in samples:
        trace = interpreter.trace_float(graph, sample)
        for node_id, tensor in trace.items():
            peak = float(np.max(np.abs(tensor)))
            if peak >= max_abs.get(node_id, -1.0):
                max_abs[node_id] = peak
    if not max_abs:
        raise MissingStats("calibration sample set is empty")
    return CalibrationStats(max_abs={node_id: max_abs[node_id] for node_id in graph.nodes})


def _check_transformed(graph: Graph):
    for node in graph.nodes.values():
        if node.kind in _UNTRANSFORMED_KINDS:
            raise UnsupportedLayer(
                f"node {node.id!r} has kind {node.kind}; run the transform pipeline first"
            )


def _manual_frac(scheme: QuantizationScheme, node_id: str) -> int:
    if isinstance(scheme.manual_frac, dict):
        if node_id not in scheme.manual_frac:
            raise MissingStats(f"manual fractional bits missing for node {node_id!r}")
        return scheme.manual_frac[node_id]
    if scheme.manual_frac is None:
        raise MissingStats("manual activation source requires manual_frac")
    return scheme.manual_frac


def derive_quant_info(graph: Graph, scheme: QuantizationScheme,
                      stats: CalibrationStats | None = None) -> dict[str, LayerQuantInfo]:
    """Per-node formats under the scheme; shared by integer conversion and
    fake-quantized evaluation so both describe the same deployment."""
    _check_transformed(graph)
    w = scheme.width

    def activation_frac(node_id: str) -> int:
        if scheme.policy == "per_network":
            return scheme.network_frac
        if scheme.activation_source == "manual":
            return _manual_frac(scheme, node_id)
        if stats is None:
            raise MissingStats("per-layer calibration requires CalibrationStats")
        return _frac_or_default([stats.max_abs[node_id]], w)

    order = topo_order(graph)
    out_frac: dict[str, int] = {}
    for node_id in order:
        node = graph.nodes[node_id]
        if node.kind in PASSTHROUGH_KINDS:
            # Pooling/ReLU cannot expand the value range; keeping the
            # producer's format avoids a requantization the generated
            # code never performs.
            out_frac[node_id] = out_frac[node.inputs[0]]
        else:
            out_frac[node_id] = activation_frac(node_id)

    info: dict[str, LayerQuantInfo] = {}
    for node_id in order:
        node = graph.nodes[node_id]
        if node.inputs:
            in_frac = min(out_frac[src] for src in node.inputs)
        else:
            in_frac = out_frac[node_id]
        weight_frac = None
        bias_frac = None
        if node.kind in ("Conv1D", "Dense", "Affine"):
            if scheme.policy == "per_network":
                weight_frac = scheme.network_frac
            else:
                kernel_key = "scale" if node.kind == "Affine" else "kernel"
                weight_frac = _frac_or_default(node.weights[kernel_key], w)
            bias_frac = weight_frac + in_frac
        info[node_id] = LayerQuantInfo(
            input_frac=in_frac,
            output_frac=out_frac[node_id],
            weight_frac=weight_frac,
            bias_frac=bias_frac,
        )
    return info


def quantize_model(graph: Graph, scheme: QuantizationScheme,
                   stats: CalibrationStats | None = None) -> QuantizedModel:
    """Convert a transformed float graph into integer weights plus formats."""
    quant = derive_quant_info(graph, scheme, stats)
    w = scheme.width
    weights: dict[str, FixedTensor] = {}
    biases: dict[str, np.ndarray] = {}
    for node in graph.nodes.values():
        qi = quant[node.id]
        if node.kind in ("Conv1D", "Dense"):
            weights[node.id] = FixedTensor(
                quantize_array(node.weights["kernel"], qi.weight_frac, w),
                QFormat(w, qi.weight_frac),
            )
            biases[node.id] = quantize_wide_array(node.weights["bias"], qi.bias_frac, w)
        elif node.kind == "Affine":
            weights[node.id] = FixedTensor(
                quantize_array(node.weights["scale"], qi.weight_frac, w),
                QFormat(w, qi.weight_frac),
            )
            biases[node.id] = quantize_wide_array(node.weights["offset"], qi.bias_frac, w)
    return QuantizedModel(graph=graph, width=w, quant=quant, weights=weights, biases=biases)


def quantize_input(qmodel: QuantizedModel, sample) -> FixedTensor:
    """Float input -> FixedTensor at the model's input format (the
    conversion the generated library leaves to its caller)."""
    fmt = qmodel.input_format
    arr = np.asarray(sample, dtype=np.float64)
    return FixedTensor(quantize_array(arr, fmt.n, fmt.w), fmt)


# ---------------------------------------------------------------------------
# Fake-quantized (float-represented) forward pass
# ---------------------------------------------------------------------------

def _qdq(arr: np.ndarray, n: int, w: int, wide: bool = False) -> np.ndarray:
    """Quantize-dequantize in float64: floor onto the 2**-n grid, saturate."""
    q = np.floor(np.ldexp(np.asarray(arr, dtype=np.float64), n))
    lo, hi = int_bounds(2 * w if wide else w)
    return np.ldexp(np.clip(q, lo, hi), -n)


def _floor_to_grid(arr: np.ndarray, n: int) -> np.ndarray:
    """Floor onto the 2**-n grid without saturating (double-width headroom)."""
    return np.ldexp(np.floor(np.ldexp(arr, n)), -n)


def _fake_requant(acc: np.ndarray, n_y: int, w: int, relu: bool) -> np.ndarray:
    out = _qdq(acc, n_y, w)
    if relu:
        out = np.maximum(out, 0.0)
    return out


def fake_quantize_forward(graph: Graph, scheme: QuantizationScheme,
                          stats: CalibrationStats | None, sample) -> np.ndarray:
    """Float forward pass with weights, biases and activations forced onto
    their fixed-point grids. Predicts quantized accuracy without integer
    execution; absent accumulator overflow it reproduces the fixed-point
    interpreter's outputs exactly after dequantization.
    """
    quant = derive_quant_info(graph, scheme, stats)
    w = scheme.width
    shapes = infer_shapes(graph)
    values: dict[str, np.ndarray] = {}
    x = np.asarray(sample, dtype=np.float64)
    if x.shape != (graph.input_shape.channels, graph.input_shape.samples):
        raise FormatMismatch(
            f"input shape {x.shape} does not match {graph.input_shape}"
        )

    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        qi = quant[node_id]
        if node.kind == "Input":
            values[node_id] = _qdq(x, qi.output_frac, w)
            continue
        src = values[node.inputs[0]]
        if node.kind == "Conv1D":
            kq = _qdq(node.weights["kernel"], qi.weight_frac, w)
            bq = _qdq(node.weights["bias"], qi.bias_frac, w, wide=True)
            padded = np.pad(src, ((0, 0), (node.attrs["pad_left"], node.attrs["pad_right"])))
            windows = np.lib.stride_tricks.sliding_window_view(
                padded, node.attrs["kernel"], axis=1
            )[:, :: node.attrs["stride"], :]
            acc = np.einsum("fck,ctk->ft", kq, windows) + bq[:, None]
            values[node_id] = _fake_requant(acc, qi.output_frac, w, node.fused_relu)
        elif node.kind == "Dense":
            kq = _qdq(node.weights["kernel"], qi.weight_frac, w)
            bq = _qdq(node.weights["bias"], qi.bias_frac, w, wide=True)
            acc = kq @ src.reshape(-1) + bq
            values[node_id] = _fake_requant(acc, qi.output_frac, w, node.fused_relu).reshape(1, -1)
        elif node.kind == "Affine":
            kq = _qdq(node.weights["scale"], qi.weight_frac, w)
            bq = _qdq(node.weights["offset"], qi.bias_frac, w, wide=True)
            acc = kq[:, None] * src + bq[:, None]
            values[node_id] = _fake_requant(acc, qi.output_frac, w, False)
        elif node.kind == "Add":
            acc = np.zeros_like(src)
            for operand_id in node.inputs:
                acc = acc + _floor_to_grid(values[operand_id], qi.output_frac)
            out = np.clip(
                acc,
                np.ldexp(int_bounds(w)[0], -qi.output_frac),
                np.ldexp(int_bounds(w)[1], -qi.output_frac),
            )
            if node.fused_relu:
                out = np.maximum(out, 0.0)
            values[node_id] = out
        elif node.kind == "MaxPool1D":
            windows = np.lib.stride_tricks.sliding_window_view(
                src, node.attrs["pool"], axis=1
            )[:, :: node.attrs["stride"], :]
            out = windows.max(axis=2)
            if node.fused_relu:
                out = np.maximum(out, 0.0)
            values[node_id] = out
        elif node.kind == "AvgPool1D":
            windows = np.lib.stride_tricks.sliding_window_view(
                src, node.attrs["pool"], axis=1
            )[:, :: node.attrs["stride"], :]
            mean = windows.sum(axis=2) / node.attrs["pool"]
            values[node_id] = _qdq(mean, qi.output_frac, w)
        elif node.kind == "ReLU":
            values[node_id] = np.maximum(src, 0.0)
        elif node.kind == "Flatten":
            values[node_id] = src.reshape(1, -1)
        elif node.kind == "SoftMax":
            values[node_id] = src
        else:
            raise UnsupportedLayer(f"kind {node.kind!r} in fake-quantized evaluation")
        expected = shapes[node_id]
        assert values[node_id].shape == (expected.channels, expected.samples)

    return values[graph.output]


def run_fixed_on_floats(qmodel: QuantizedModel, sample) -> np.ndarray:
    """Convenience: quantize a float sample, run the fixed interpreter,
    dequantize the result."""
    result = interpreter.run_fixed(qmodel, quantize_input(qmodel, sample))
    return result.to_float()
