"""C99 inference library emission.

The generated library is self-contained (stdlib only), allocation-free
and recursion-free. model.c holds one static buffer array per pool and
one static function per layer; cnn() calls them in topological order,
wiring pool buffers according to the allocation plan. The graph output
is written straight into the caller's output buffer.

Arithmetic mirrors the fixed-point interpreter exactly: double-width
accumulators (wrapping on overflow; compile with -fwrapv), arithmetic
right shifts for requantization, ReLU before saturation. Float emission
mirrors run_float's binary32 accumulation order; compile generated float
models with -std=c99 (or -ffp-contract=off) so products and adds are not
fused into FMAs.

Emission is a pure function of (model, plan): identical inputs yield
byte-identical bundles.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedLayer
from .fxp import QFormat, int_bounds
from .ir import Graph, Shape, infer_shapes, topo_order
from .allocator import AllocationPlan
from .quantizer import QuantizedModel

_EMITTABLE = ("Conv1D", "Dense", "MaxPool1D", "AvgPool1D", "Add", "ReLU", "Affine", "Flatten")


@dataclass(frozen=True)
class SourceBundle:
    files: dict[str, str]

    def write_to(self, directory) -> None:
        import os

        os.makedirs(directory, exist_ok=True)
        for name in sorted(self.files):
            with open(os.path.join(directory, name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.files[name])


def _sanitize_ids(order: list[str]) -> dict[str, str]:
    """Deterministic node-id -> C identifier map, collision-free.

    Uniqueness is enforced case-insensitively because weight array names
    and include guards are upper-cased forms of these identifiers.
    """
    mapping: dict[str, str] = {}
    seen: set[str] = set()
    for node_id in order:
        base = re.sub(r"[^A-Za-z0-9_]", "_", node_id)
        if not base or base[0].isdigit():
            base = "n_" + base
        name = base
        counter = 1
        while name.lower() in seen:
            counter += 1
            name = f"{base}_{counter}"
        seen.add(name.lower())
        mapping[node_id] = name
    return mapping


def _format_array(arr: np.ndarray, fmt_scalar) -> str:
    if arr.ndim == 1:
        return "{" + ", ".join(fmt_scalar(v) for v in arr) + "}"
    inner = ", ".join(_format_array(sub, fmt_scalar) for sub in arr)
    return "{" + inner + "}"


def _int_literal(v) -> str:
    return str(int(v))


def _float_literal(v) -> str:
    # Hex float literals round-trip binary32 exactly and never depend on
    # locale or printf quirks.
    return float(np.float32(v)).hex() + "f"


def input_conversion_helper(fmt: QFormat | None) -> str:
    """QUANTIZE_INPUT macro: float -> number_t at the model's input scale."""
    if fmt is None:
        return "#define QUANTIZE_INPUT(x) (x)"
    if fmt.n >= 0:
        expr = "floor((x) * (1 << INPUT_SCALE_FACTOR))"
    else:
        expr = "floor((x) / (1 << -(INPUT_SCALE_FACTOR)))"
    return f"#define QUANTIZE_INPUT(x) (clamp_to_number_t((long_number_t){expr}))"


def _render_number_h(width) -> str:
    lines = [
        "#ifndef NUMBER_H",
        "#define NUMBER_H",
        "",
        "#include <math.h>",
    ]
    if width == "float":
        lines += [
            "",
            "typedef float number_t;",
            "typedef float long_number_t;",
            "",
            "#define NUMBER_MIN (-INFINITY)",
            "#define NUMBER_MAX (INFINITY)",
            "",
            "static inline number_t clamp_to_number_t(long_number_t value) {",
            "    return value;",
            "}",
        ]
    else:
        container = "int8_t" if width <= 8 else "int16_t"
        wide = "int16_t" if width <= 8 else "int32_t"
        lo, hi = int_bounds(width)
        lines += [
            "#include <stdint.h>",
            "",
            f"typedef {container} number_t;",
            f"typedef {wide} long_number_t;",
            "",
            f"#define NUMBER_MIN ({lo})",
            f"#define NUMBER_MAX ({hi})",
            "",
            "static inline number_t clamp_to_number_t(long_number_t value) {",
            "    if (value > NUMBER_MAX) {",
            "        return (number_t)NUMBER_MAX;",
            "    }",
            "    if (value < NUMBER_MIN) {",
            "        return (number_t)NUMBER_MIN;",
            "    }",
            "    return (number_t)value;",
            "}",
        ]
    lines += ["", "#endif", ""]
    return "\n".join(lines)


def _render_model_h(graph: Graph, shapes, input_fmt: QFormat | None) -> str:
    out_shape = shapes[graph.output]
    scale = input_fmt.n if input_fmt is not None else 0
    lines = [
        "#ifndef MODEL_H",
        "#define MODEL_H",
        "",
        '#include "number.h"',
        "",
        f"#define MODEL_INPUT_CHANNELS {graph.input_shape.channels}",
        f"#define MODEL_INPUT_SAMPLES {graph.input_shape.samples}",
        f"#define MODEL_OUTPUT_LENGTH {out_shape.size}",
        f"#define INPUT_SCALE_FACTOR {scale}",
        "",
        input_conversion_helper(input_fmt),
        "",
        "typedef number_t output_layer_type[MODEL_OUTPUT_LENGTH];",
        "",
        "void cnn(const number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES],",
        "         output_layer_type output);",
        "",
        "#endif",
        "",
    ]
    return "\n".join(lines)


class _Emitter:
    """Renders layer functions for one model (fixed-point or float)."""

    def __init__(self, graph: Graph, qmodel: QuantizedModel | None):
        self.graph = graph
        self.qmodel = qmodel
        self.shapes = infer_shapes(graph)
        self.order = topo_order(graph)
        self.names = _sanitize_ids(self.order)
        self.fixed = qmodel is not None

    # -- naming ----------------------------------------------------------

    def fn(self, node_id: str) -> str:
        return f"node_{self.names[node_id]}"

    def array(self, node_id: str, which: str) -> str:
        return f"{self.names[node_id].upper()}_{which.upper()}"

    # -- fixed-point scaling ---------------------------------------------

    def _requant_shift(self, node_id: str) -> int:
        qi = self.qmodel.quant[node_id]
        return qi.bias_frac - qi.output_frac

    def _operand_shift(self, src_id: str, node_id: str) -> int:
        return (
            self.qmodel.quant[src_id].output_frac
            - self.qmodel.quant[node_id].output_frac
        )

    def _scale_stmt(self, shift: int, indent: str = "            ") -> list[str]:
        if not self.fixed or shift == 0:
            return []
        if shift > 0:
            return [f"{indent}acc = acc >> {shift};"]
        return [f"{indent}acc = acc * (1 << {-shift});"]

    # -- weight headers ----------------------------------------------------

    def weight_header(self, node_id: str) -> str | None:
        node = self.graph.nodes[node_id]
        if node.kind not in ("Conv1D", "Dense", "Affine"):
            return None
        name = self.names[node_id]
        pieces = [
            f"#ifndef {name.upper()}_WEIGHTS_H",
            f"#define {name.upper()}_WEIGHTS_H",
            "",
            '#include "number.h"',
            "",
        ]
        if node.kind == "Affine":
            keys = (("scale", "SCALE", "number_t"), ("offset", "OFFSET", "long_number_t"))
        else:
            keys = (("kernel", "KERNEL", "number_t"), ("bias", "BIAS", "long_number_t"))
        for key, suffix, ctype in keys:
            if self.fixed:
                if key in ("kernel", "scale"):
                    arr = self.qmodel.weights[node_id].data
                else:
                    arr = self.qmodel.biases[node_id]
                body = _format_array(arr, _int_literal)
            else:
                arr = node.weights[key]
                ctype = "number_t"
                body = _format_array(arr, _float_literal)
            dims = "".join(f"[{d}]" for d in arr.shape)
            pieces.append(f"static const {ctype} {self.array(node_id, suffix)}{dims} = {body};")
            pieces.append("")
        pieces += ["#endif", ""]
        return "\n".join(pieces)

    # -- layer functions ---------------------------------------------------

    def _relu_stmt(self) -> str:
        return "            acc = acc > 0 ? acc : 0;"

    def _signature(self, node_id: str) -> str:
        node = self.graph.nodes[node_id]
        out = self.shapes[node_id]
        params = []
        for i, src in enumerate(node.inputs):
            s = self.shapes[src]
            suffix = f"_{i}" if len(node.inputs) > 1 else ""
            params.append(f"const number_t input{suffix}[{s.channels}][{s.samples}]")
        params.append(f"number_t output[{out.channels}][{out.samples}]")
        return f"static void {self.fn(node_id)}({', '.join(params)})"

    def layer_function(self, node_id: str) -> str:
        node = self.graph.nodes[node_id]
        kind = node.kind
        if kind == "Conv1D":
            body = self._conv_body(node_id)
        elif kind == "Dense":
            body = self._dense_body(node_id)
        elif kind == "MaxPool1D":
            body = self._maxpool_body(node_id)
        elif kind == "AvgPool1D":
            body = self._avgpool_body(node_id)
        elif kind == "Add":
            body = self._add_body(node_id)
        elif kind == "ReLU":
            body = self._relu_body(node_id)
        elif kind == "Affine":
            body = self._affine_body(node_id)
        elif kind == "Flatten":
            body = self._flatten_body(node_id)
        else:
            raise UnsupportedLayer(f"cannot emit code for kind {kind!r}")
        return "\n".join([self._signature(node_id) + " {"] + body + ["}"])

    def _conv_body(self, node_id: str) -> list[str]:
        node = self.graph.nodes[node_id]
        in_shape = self.shapes[node.inputs[0]]
        out = self.shapes[node_id]
        a = node.attrs
        padded = a["pad_left"] > 0 or a["pad_right"] > 0
        lines = [
            f"    for (int f = 0; f < {out.channels}; f++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            f"            long_number_t acc = {self.array(node_id, 'BIAS')}[f];",
            f"            for (int c = 0; c < {in_shape.channels}; c++) {{",
            f"                for (int k = 0; k < {a['kernel']}; k++) {{",
            f"                    int p = t * {a['stride']} + k - {a['pad_left']};",
        ]
        guard = "                    "
        stmt = (
            f"acc += (long_number_t){self.array(node_id, 'KERNEL')}[f][c][k]"
            f" * (long_number_t)input[c][p];"
        )
        if padded:
            lines += [
                f"{guard}if (p >= 0 && p < {in_shape.samples}) {{",
                f"{guard}    {stmt}",
                f"{guard}}}",
            ]
        else:
            lines.append(f"{guard}{stmt}")
        lines += [
            "                }",
            "            }",
        ]
        lines += self._scale_stmt(self._requant_shift(node_id)) if self.fixed else []
        if node.fused_relu:
            lines.append(self._relu_stmt())
        lines += [
            "            output[f][t] = clamp_to_number_t(acc);",
            "        }",
            "    }",
        ]
        return lines

    def _dense_body(self, node_id: str) -> list[str]:
        node = self.graph.nodes[node_id]
        in_shape = self.shapes[node.inputs[0]]
        units = node.attrs["units"]
        lines = [
            "    const number_t *flat = &input[0][0];",
            f"    for (int u = 0; u < {units}; u++) {{",
            f"        long_number_t acc = {self.array(node_id, 'BIAS')}[u];",
            f"        for (int i = 0; i < {in_shape.size}; i++) {{",
            f"            acc += (long_number_t){self.array(node_id, 'KERNEL')}[u][i]"
            " * (long_number_t)flat[i];",
            "        }",
        ]
        lines += self._scale_stmt(self._requant_shift(node_id), indent="        ") if self.fixed else []
        if node.fused_relu:
            lines.append("        acc = acc > 0 ? acc : 0;")
        lines += [
            "        output[0][u] = clamp_to_number_t(acc);",
            "    }",
        ]
        return lines

    def _maxpool_body(self, node_id: str) -> list[str]:
        node = self.graph.nodes[node_id]
        out = self.shapes[node_id]
        a = node.attrs
        lines = [
            f"    for (int c = 0; c < {out.channels}; c++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            f"            number_t max_value = input[c][t * {a['stride']}];",
            f"            for (int j = 1; j < {a['pool']}; j++) {{",
            f"                number_t v = input[c][t * {a['stride']} + j];",
            "                if (v > max_value) {",
            "                    max_value = v;",
            "                }",
            "            }",
        ]
        if node.fused_relu:
            lines.append("            max_value = max_value > 0 ? max_value : 0;")
        lines += [
            "            output[c][t] = max_value;",
            "        }",
            "    }",
        ]
        return lines

    def _avgpool_body(self, node_id: str) -> list[str]:
        node = self.graph.nodes[node_id]
        out = self.shapes[node_id]
        a = node.attrs
        lines = [
            f"    for (int c = 0; c < {out.channels}; c++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            "            long_number_t acc = 0;",
            f"            for (int j = 0; j < {a['pool']}; j++) {{",
            f"                acc += input[c][t * {a['stride']} + j];",
            "            }",
        ]
        if self.fixed:
            lines += [
                # Floor division: C's / truncates toward zero.
                f"            if (acc % {a['pool']} < 0) {{",
                f"                acc = acc / {a['pool']} - 1;",
                "            } else {",
                f"                acc = acc / {a['pool']};",
                "            }",
            ]
        else:
            lines.append(f"            acc = acc / {_float_literal(float(a['pool']))};")
        lines += [
            "            output[c][t] = clamp_to_number_t(acc);",
            "        }",
            "    }",
        ]
        return lines

    def _add_body(self, node_id: str) -> list[str]:
        node = self.graph.nodes[node_id]
        out = self.shapes[node_id]
        lines = [
            f"    for (int c = 0; c < {out.channels}; c++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            "            long_number_t acc = 0;",
        ]
        for i, src in enumerate(node.inputs):
            term = f"(long_number_t)input_{i}[c][t]"
            if self.fixed:
                shift = self._operand_shift(src, node_id)
                if shift > 0:
                    term = f"({term} >> {shift})"
                elif shift < 0:
                    term = f"({term} * (1 << {-shift}))"
            lines.append(f"            acc += {term};")
        if node.fused_relu:
            lines.append(self._relu_stmt())
        lines += [
            "            output[c][t] = clamp_to_number_t(acc);",
            "        }",
            "    }",
        ]
        return lines

    def _relu_body(self, node_id: str) -> list[str]:
        out = self.shapes[node_id]
        return [
            f"    for (int c = 0; c < {out.channels}; c++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            "            number_t v = input[c][t];",
            "            output[c][t] = v > 0 ? v : 0;",
            "        }",
            "    }",
        ]

    def _affine_body(self, node_id: str) -> list[str]:
        out = self.shapes[node_id]
        lines = [
            f"    for (int c = 0; c < {out.channels}; c++) {{",
            f"        for (int t = 0; t < {out.samples}; t++) {{",
            f"            long_number_t acc = (long_number_t){self.array(node_id, 'SCALE')}[c]"
            " * (long_number_t)input[c][t];",
            f"            acc += {self.array(node_id, 'OFFSET')}[c];",
        ]
        lines += self._scale_stmt(self._requant_shift(node_id)) if self.fixed else []
        lines += [
            "            output[c][t] = clamp_to_number_t(acc);",
            "        }",
            "    }",
        ]
        return lines

    def _flatten_body(self, node_id: str) -> list[str]:
        size = self.shapes[node_id].size
        return [
            "    const number_t *src = &input[0][0];",
            "    number_t *dst = &output[0][0];",
            f"    for (int i = 0; i < {size}; i++) {{",
            "        dst[i] = src[i];",
            "    }",
        ]

    # -- model.c -----------------------------------------------------------

    def render_model_c(self, plan: AllocationPlan) -> str:
        parts = ['#include "model.h"', '#include "number.h"', ""]
        weight_nodes = [
            node_id
            for node_id in self.order
            if self.graph.nodes[node_id].kind in ("Conv1D", "Dense", "Affine")
        ]
        for node_id in weight_nodes:
            parts.append(f'#include "{self.names[node_id]}_weights.h"')
        if weight_nodes:
            parts.append("")

        # The graph output goes straight to the caller's buffer, so its pool
        # slot may end up unreferenced; emit only pools actually used.
        used_pools = sorted(
            {
                plan.assignment[node_id]
                for node_id in self.order
                if node_id in plan.assignment and node_id != self.graph.output
            }
        )
        for pool in used_pools:
            parts.append(f"static number_t buffer_{pool}[{plan.pool_sizes[pool]}];")
        if used_pools:
            parts.append("")

        for node_id in self.order:
            if self.graph.nodes[node_id].kind == "Input":
                continue
            parts.append(self.layer_function(node_id))
            parts.append("")

        parts.append(
            "void cnn(const number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES],"
        )
        parts.append("         output_layer_type output) {")
        if self.graph.output == self.graph.input_id:
            # Degenerate layerless graph: the model is the identity.
            parts += [
                "    for (int i = 0; i < MODEL_OUTPUT_LENGTH; i++) {",
                "        output[i] = (&input[0][0])[i];",
                "    }",
                "}",
                "",
            ]
            return "\n".join(parts)
        for node_id in self.order:
            node = self.graph.nodes[node_id]
            if node.kind == "Input":
                continue
            args = []
            for src in node.inputs:
                s = self.shapes[src]
                if self.graph.nodes[src].kind == "Input":
                    args.append("input")
                else:
                    args.append(
                        f"(const number_t (*)[{s.samples}])buffer_{plan.assignment[src]}"
                    )
            out_shape = self.shapes[node_id]
            if node_id == self.graph.output:
                args.append(f"(number_t (*)[{out_shape.samples}])output")
            else:
                args.append(
                    f"(number_t (*)[{out_shape.samples}])buffer_{plan.assignment[node_id]}"
                )
            parts.append(f"    {self.fn(node_id)}({', '.join(args)});")
        parts.append("}")
        parts.append("")
        return "\n".join(parts)


def emit(model, plan: AllocationPlan) -> SourceBundle:
    """Emit the C library for a QuantizedModel (fixed-point) or Graph (float)."""
    if isinstance(model, QuantizedModel):
        graph, qmodel = model.graph, model
        width = model.width
        input_fmt = model.input_format
    elif isinstance(model, Graph):
        graph, qmodel = model, None
        width = "float"
        input_fmt = None
    else:
        raise TypeError(f"cannot emit from {type(model).__name__}")

    for node in graph.nodes.values():
        if node.kind != "Input" and node.kind not in _EMITTABLE:
            raise UnsupportedLayer(
                f"node {node.id!r}: kind {node.kind} cannot be emitted; "
                "run the transform pipeline first"
            )

    emitter = _Emitter(graph, qmodel)
    files = {
        "number.h": _render_number_h(width),
        "model.h": _render_model_h(graph, emitter.shapes, input_fmt),
        "model.c": emitter.render_model_c(plan),
    }
    for node_id in emitter.order:
        header = emitter.weight_header(node_id)
        if header is not None:
            files[f"{emitter.names[node_id]}_weights.h"] = header
    return SourceBundle(files=files)


def render_harness(float_mode: bool) -> str:
    """main.c: reads little-endian raw input vectors from stdin until EOF,
    runs cnn() on each and prints output values one per line."""
    if float_mode:
        print_stmt = '            printf("%.9g\\n", (double)output[i]);'
    else:
        print_stmt = '            printf("%ld\\n", (long)output[i]);'
    return "\n".join(
        [
            "#include <stdio.h>",
            "",
            '#include "model.h"',
            "",
            "int main(void) {",
            "    static number_t input[MODEL_INPUT_CHANNELS][MODEL_INPUT_SAMPLES];",
            "    static output_layer_type output;",
            "    size_t count = (size_t)MODEL_INPUT_CHANNELS * (size_t)MODEL_INPUT_SAMPLES;",
            "    while (fread(input, sizeof(number_t), count, stdin) == count) {",
            "        cnn((const number_t (*)[MODEL_INPUT_SAMPLES])input, output);",
            "        for (int i = 0; i < MODEL_OUTPUT_LENGTH; i++) {",
            print_stmt,
            "        }",
            "    }",
            "    return 0;",
            "}",
            "",
        ]
    )
