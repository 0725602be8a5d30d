"""Static operation counts, cycle estimates and memory footprint reporting.

The count model prices MACC, add and shift at one cycle and max/saturate
at two (a compare plus a conditional move). Counts are output-driven:
each produced element pays for the work its loop actually performs, so
padded convolutions count fewer products than the dense formula.

AvgPool1D and the per-channel affine op have no published count
formulas; their entries use the extension formulas below and are marked
extrapolated in reports (the divide in AvgPool is priced as a shift).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnsupportedLayer
from .ir import Graph, Shape, infer_shapes, topo_order

CYCLES_MACC = 1
CYCLES_ADD = 1
CYCLES_SHIFT = 1
CYCLES_MAXSAT = 2

# Kinds whose formulas are extensions rather than published ones.
EXTRAPOLATED_KINDS = ("AvgPool1D", "Affine")


@dataclass(frozen=True)
class OpCounts:
    macc: int = 0
    add: int = 0
    shift: int = 0
    maxsat: int = 0

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(
            self.macc + other.macc,
            self.add + other.add,
            self.shift + other.shift,
            self.maxsat + other.maxsat,
        )

    def scaled(self, factor: int) -> "OpCounts":
        return OpCounts(
            self.macc * factor, self.add * factor, self.shift * factor, self.maxsat * factor
        )


def estimate_cycles(counts: OpCounts) -> int:
    return (
        counts.macc * CYCLES_MACC
        + counts.add * CYCLES_ADD
        + counts.shift * CYCLES_SHIFT
        + counts.maxsat * CYCLES_MAXSAT
    )


def _conv_products(in_samples: int, k: int, stride: int, pad_left: int, pad_right: int) -> int:
    """Products per (filter, channel) pair: padded positions are skipped, not computed."""
    out_s = (in_samples + pad_left + pad_right - k) // stride + 1
    if pad_left == 0 and pad_right == 0:
        return out_s * k
    total = 0
    for t in range(out_s):
        start = t * stride - pad_left
        lo = max(start, 0)
        hi = min(start + k, in_samples)
        total += max(0, hi - lo)
    return total


def count_node(kind: str, attrs: dict, in_shape: Shape, out_shape: Shape,
               num_inputs: int = 1) -> OpCounts:
    """Count model for one layer; raises UnsupportedLayer for unpriced kinds."""
    fused = 1 if attrs.get("fused_relu") else 0
    if kind in ("Input", "Flatten"):
        return OpCounts()
    if kind == "Conv1D":
        f, s = out_shape.channels, out_shape.samples
        products = f * in_shape.channels * _conv_products(
            in_shape.samples, attrs["kernel"], attrs["stride"],
            attrs["pad_left"], attrs["pad_right"],
        )
        return OpCounts(macc=products, shift=2 * f * s, maxsat=(1 + fused) * f * s)
    if kind == "Dense":
        n = attrs["units"]
        return OpCounts(macc=n * in_shape.size, shift=2 * n, maxsat=(1 + fused) * n)
    if kind == "MaxPool1D":
        elems = out_shape.size
        return OpCounts(maxsat=elems * attrs["pool"] + fused * elems)
    if kind == "AvgPool1D":
        elems = out_shape.size
        return OpCounts(add=elems * attrs["pool"], shift=elems, maxsat=elems)
    if kind == "Add":
        elems = out_shape.size
        return OpCounts(
            add=elems * (num_inputs - 1),
            shift=elems * num_inputs,
            maxsat=(1 + fused) * elems,
        )
    if kind == "ReLU":
        return OpCounts(maxsat=out_shape.size)
    if kind == "Affine":
        elems = out_shape.size
        return OpCounts(macc=elems, shift=2 * elems, maxsat=elems)
    raise UnsupportedLayer(f"no count model for kind {kind!r}")


def count_static(graph: Graph, shapes: dict[str, Shape] | None = None) -> dict[str, OpCounts]:
    shapes = shapes or infer_shapes(graph)
    counts: dict[str, OpCounts] = {}
    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        in_shape = shapes[node.inputs[0]] if node.inputs else shapes[node_id]
        counts[node_id] = count_node(
            node.kind, node.attrs, in_shape, shapes[node_id], num_inputs=len(node.inputs)
        )
    return counts


def _container_bytes(width) -> int:
    if width == "float":
        return 4
    if width <= 8:
        return 1
    return 2


def rom_bytes(graph: Graph, width, mode: str = "uniform") -> int:
    """Weight storage footprint.

    mode="uniform": every parameter at the container of `width`, the
    conventional headline figure. mode="deployed": biases at their
    double-width container, matching the emitted weight headers.
    """
    if mode not in ("uniform", "deployed"):
        raise ValueError(f"unknown rom mode {mode!r}")
    unit = _container_bytes(width)
    total = 0
    for node in graph.nodes.values():
        for name, arr in node.weights.items():
            per_elem = unit
            if mode == "deployed" and width != "float" and name in ("bias", "offset"):
                per_elem = 2 * unit
            total += arr.size * per_elem
    return int(total)


@dataclass(frozen=True)
class CostReport:
    per_node: dict[str, OpCounts]
    extrapolated: tuple[str, ...]
    total: OpCounts
    total_cycles: int
    rom_bytes: int
    ram_bytes: int

    def as_dict(self) -> dict:
        return {
            "per_node": {
                node_id: {
                    "macc": c.macc,
                    "add": c.add,
                    "shift": c.shift,
                    "maxsat": c.maxsat,
                    "cycles": estimate_cycles(c),
                }
                for node_id, c in self.per_node.items()
            },
            "extrapolated_nodes": list(self.extrapolated),
            "total": {
                "macc": self.total.macc,
                "add": self.total.add,
                "shift": self.total.shift,
                "maxsat": self.total.maxsat,
                "cycles": self.total_cycles,
            },
            "rom_bytes": self.rom_bytes,
            "ram_bytes": self.ram_bytes,
        }


def cost_report(graph: Graph, width, ram_bytes: int = 0, rom_mode: str = "uniform") -> CostReport:
    per_node = count_static(graph)
    total = OpCounts()
    for counts in per_node.values():
        total = total + counts
    extrapolated = tuple(
        node_id
        for node_id in per_node
        if graph.nodes[node_id].kind in EXTRAPOLATED_KINDS
    )
    return CostReport(
        per_node=per_node,
        extrapolated=extrapolated,
        total=total,
        total_cycles=estimate_cycles(total),
        rom_bytes=rom_bytes(graph, width, rom_mode),
        ram_bytes=ram_bytes,
    )
