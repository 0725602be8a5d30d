"""Reference execution of model graphs.

Three paths:

* run_float: binary32 arithmetic with a fixed accumulation order
  (channel-major, then kernel tap), matching the emitted C code bit for
  bit, including for float-mode emission.
* run_fixed: bit-exact fixed-point execution. Products of w-bit operands
  accumulate in the 2w-bit container (wrapping on overflow exactly as
  the C accumulator does), biases enter at weight_frac + input_frac,
  the accumulator is shifted to the output scale, fused ReLU applies,
  then the value saturates back to w bits. Max pooling compares in
  operand width and never requantizes. Add aligns every operand to the
  output scale (one shift each), sums in double width and saturates once.
* run_instrumented: run_fixed plus per-node operation tallies.

SoftMax is evaluated as identity everywhere: inference-only deployments
drop it and argmax is unchanged, so actual exponentiation is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .costmodel import OpCounts
from .errors import EmptyDataset, FormatMismatch, ShapeMismatch, UnsupportedLayer
from .fxp import FixedTensor, QFormat, container_dtype
from .ir import Graph, topo_order


@dataclass(frozen=True)
class ExecutionTrace:
    outputs: dict[str, FixedTensor]
    counts: dict[str, OpCounts]

    @property
    def total_counts(self) -> OpCounts:
        total = OpCounts()
        for c in self.counts.values():
            total = total + c
        return total


def _check_input_shape(graph: Graph, x: np.ndarray):
    want = (graph.input_shape.channels, graph.input_shape.samples)
    if x.shape != want:
        raise ShapeMismatch(f"input shape {x.shape} does not match graph input {want}")


def trace_float(graph: Graph, sample) -> dict[str, np.ndarray]:
    """Per-node float32 outputs for one sample."""
    x = np.ascontiguousarray(sample, dtype=np.float32)
    _check_input_shape(graph, x)
    values: dict[str, np.ndarray] = {}
    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        if node.kind == "Input":
            values[node_id] = x
            continue
        src = values[node.inputs[0]]
        if node.kind == "Conv1D":
            values[node_id] = kernels.conv1d_float(
                src,
                node.weights["kernel"].astype(np.float32),
                node.weights["bias"].astype(np.float32),
                node.attrs["stride"],
                node.attrs["pad_left"],
                node.attrs["pad_right"],
                node.fused_relu,
            )
        elif node.kind == "Dense":
            out = kernels.dense_float(
                src.reshape(-1),
                node.weights["kernel"].astype(np.float32),
                node.weights["bias"].astype(np.float32),
                node.fused_relu,
            )
            values[node_id] = out.reshape(1, -1)
        elif node.kind == "MaxPool1D":
            values[node_id] = kernels.maxpool_float(
                src, node.attrs["pool"], node.attrs["stride"], node.fused_relu
            )
        elif node.kind == "AvgPool1D":
            values[node_id] = kernels.avgpool_float(src, node.attrs["pool"], node.attrs["stride"])
        elif node.kind == "Add":
            values[node_id] = kernels.add_float(
                [values[src_id] for src_id in node.inputs], node.fused_relu
            )
        elif node.kind == "ReLU":
            values[node_id] = kernels.relu_float(src)
        elif node.kind == "Affine":
            values[node_id] = kernels.affine_float(
                src,
                node.weights["scale"].astype(np.float32),
                node.weights["offset"].astype(np.float32),
            )
        elif node.kind == "BatchNorm":
            sigma = np.sqrt(
                node.weights["variance"].astype(np.float32)
                + np.float32(node.attrs["epsilon"])
            )
            values[node_id] = (
                node.weights["gamma"].astype(np.float32)[:, None]
                * (src - node.weights["mean"].astype(np.float32)[:, None])
                / sigma[:, None]
                + node.weights["beta"].astype(np.float32)[:, None]
            )
        elif node.kind == "ZeroPad1D":
            values[node_id] = np.pad(
                src, ((0, 0), (node.attrs["pad_left"], node.attrs["pad_right"]))
            )
        elif node.kind == "Flatten":
            values[node_id] = src.reshape(1, -1)
        elif node.kind == "SoftMax":
            values[node_id] = src
        else:
            raise UnsupportedLayer(f"kind {node.kind!r} in float execution")
    return values


def run_float(graph: Graph, sample) -> np.ndarray:
    return trace_float(graph, sample)[graph.output]


def _conv_effective_products(in_samples, k, stride, pad_left, pad_right) -> int:
    """Products actually computed per (filter, channel): taps over padding are skipped."""
    out_s = (in_samples + pad_left + pad_right - k) // stride + 1
    total = 0
    for t in range(out_s):
        for kk in range(k):
            if 0 <= t * stride + kk - pad_left < in_samples:
                total += 1
    return total


def _run_fixed_nodes(qmodel, x: FixedTensor, count: bool):
    graph = qmodel.graph
    w = qmodel.width
    want = qmodel.input_format
    if x.fmt != want:
        raise FormatMismatch(f"input format {x.fmt} does not match model input {want}")
    if x.data.shape != (graph.input_shape.channels, graph.input_shape.samples):
        raise ShapeMismatch(
            f"input shape {x.data.shape} does not match graph input {graph.input_shape}"
        )

    values: dict[str, np.ndarray] = {}
    counts: dict[str, OpCounts] = {}
    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        qi = qmodel.quant[node_id]
        fused = node.fused_relu
        tally = OpCounts()
        if node.kind == "Input":
            values[node_id] = x.data
        elif node.kind == "Conv1D":
            src = values[node.inputs[0]]
            shift = qi.bias_frac - qi.output_frac
            values[node_id] = kernels.conv1d_fixed(
                src,
                qmodel.weights[node_id].data,
                qmodel.biases[node_id],
                node.attrs["stride"],
                node.attrs["pad_left"],
                node.attrs["pad_right"],
                fused,
                shift,
                w,
            )
            if count:
                f, out_s = values[node_id].shape
                tally = OpCounts(
                    macc=f
                    * src.shape[0]
                    * _conv_effective_products(
                        src.shape[1],
                        node.attrs["kernel"],
                        node.attrs["stride"],
                        node.attrs["pad_left"],
                        node.attrs["pad_right"],
                    ),
                    shift=2 * f * out_s,
                    maxsat=(2 if fused else 1) * f * out_s,
                )
        elif node.kind == "Dense":
            src = values[node.inputs[0]].reshape(-1)
            shift = qi.bias_frac - qi.output_frac
            values[node_id] = kernels.dense_fixed(
                src, qmodel.weights[node_id].data, qmodel.biases[node_id], fused, shift, w
            ).reshape(1, -1)
            if count:
                n = node.attrs["units"]
                tally = OpCounts(
                    macc=n * src.shape[0], shift=2 * n, maxsat=(2 if fused else 1) * n
                )
        elif node.kind == "Affine":
            src = values[node.inputs[0]]
            shift = qi.bias_frac - qi.output_frac
            values[node_id] = kernels.affine_fixed(
                src, qmodel.weights[node_id].data, qmodel.biases[node_id], shift, w
            )
            if count:
                elems = values[node_id].size
                tally = OpCounts(macc=elems, shift=2 * elems, maxsat=elems)
        elif node.kind == "MaxPool1D":
            src = values[node.inputs[0]]
            values[node_id] = kernels.maxpool_fixed(
                src, node.attrs["pool"], node.attrs["stride"], fused
            )
            if count:
                elems = values[node_id].size
                tally = OpCounts(maxsat=elems * node.attrs["pool"] + (elems if fused else 0))
        elif node.kind == "AvgPool1D":
            src = values[node.inputs[0]]
            values[node_id] = kernels.avgpool_fixed(
                src, node.attrs["pool"], node.attrs["stride"], w
            )
            if count:
                elems = values[node_id].size
                tally = OpCounts(
                    add=elems * node.attrs["pool"], shift=elems, maxsat=elems
                )
        elif node.kind == "Add":
            stack = [values[src_id] for src_id in node.inputs]
            shifts = [
                qmodel.quant[src_id].output_frac - qi.output_frac for src_id in node.inputs
            ]
            values[node_id] = kernels.add_fixed(stack, shifts, fused, w)
            if count:
                elems = values[node_id].size
                i = len(node.inputs)
                tally = OpCounts(
                    add=elems * (i - 1),
                    shift=elems * i,
                    maxsat=(2 if fused else 1) * elems,
                )
        elif node.kind == "ReLU":
            src = values[node.inputs[0]]
            values[node_id] = kernels.relu_fixed(src)
            if count:
                tally = OpCounts(maxsat=values[node_id].size)
        elif node.kind == "Flatten":
            values[node_id] = values[node.inputs[0]].reshape(1, -1)
        elif node.kind == "SoftMax":
            values[node_id] = values[node.inputs[0]]
        else:
            raise UnsupportedLayer(f"kind {node.kind!r} in fixed-point execution")
        if count:
            counts[node_id] = tally
    return values, counts


def run_fixed(qmodel, x: FixedTensor) -> FixedTensor:
    values, _ = _run_fixed_nodes(qmodel, x, count=False)
    return FixedTensor(values[qmodel.graph.output], qmodel.output_format)


def run_instrumented(qmodel, x: FixedTensor) -> ExecutionTrace:
    values, counts = _run_fixed_nodes(qmodel, x, count=True)
    outputs = {
        node_id: FixedTensor(
            data, QFormat(qmodel.width, qmodel.quant[node_id].output_frac)
        )
        for node_id, data in values.items()
    }
    return ExecutionTrace(outputs=outputs, counts=counts)


def evaluate(model, inputs, labels=None, reference_outputs=None) -> dict:
    """Top-1 accuracy (argmax ties -> lowest index), per-sample outputs, and
    MSE against reference outputs when given. `model` is a float Graph or
    a QuantizedModel; for the latter, inputs are converted at the model's
    input format and outputs are dequantized.
    """
    inputs = list(inputs)
    if not inputs:
        raise EmptyDataset("no input samples")

    outputs = []
    if isinstance(model, Graph):
        for sample in inputs:
            outputs.append(np.asarray(run_float(model, sample), dtype=np.float64))
    else:
        from .quantizer import quantize_input

        for sample in inputs:
            outputs.append(run_fixed(model, quantize_input(model, sample)).to_float())

    result: dict = {"outputs": outputs}
    if labels is not None:
        labels = list(labels)
        if len(labels) != len(outputs):
            raise ShapeMismatch(f"{len(labels)} labels for {len(outputs)} samples")
        hits = sum(
            1 for out, label in zip(outputs, labels) if int(np.argmax(out.reshape(-1))) == label
        )
        result["accuracy"] = hits / len(outputs)
    if reference_outputs is not None:
        refs = [np.asarray(r, dtype=np.float64).reshape(-1) for r in reference_outputs]
        if len(refs) != len(outputs):
            raise ShapeMismatch(f"{len(refs)} reference outputs for {len(outputs)} samples")
        diffs = [out.reshape(-1) - ref for out, ref in zip(outputs, refs)]
        result["mse"] = float(np.mean([np.mean(d * d) for d in diffs]))
        result["max_abs_diff"] = float(max(np.max(np.abs(d)) for d in diffs))
    return result


def cast_fixed_input(sample, fmt: QFormat) -> FixedTensor:
    """Wrap raw integers as a FixedTensor in `fmt` (no scaling applied)."""
    data = np.asarray(sample).astype(container_dtype(fmt.w))
    return FixedTensor(data, fmt)
