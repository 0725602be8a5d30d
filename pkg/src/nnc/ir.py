"""Model intermediate representation.

A Graph is a DAG of LayerNodes over 1D tensors shaped (channels, samples).
Graphs are immutable after construction: every transformation builds a new
Graph, so all operations here are pure and thread-safe.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import CycleDetected, NonPositiveOutputLength

KINDS = (
    "Input",
    "Conv1D",
    "Dense",
    "MaxPool1D",
    "AvgPool1D",
    "BatchNorm",
    "Affine",
    "Add",
    "ReLU",
    "ZeroPad1D",
    "Flatten",
    "SoftMax",
)

# Kinds that may carry a fused trailing ReLU.
FUSABLE_RELU_KINDS = ("Conv1D", "MaxPool1D", "Dense", "Add")

# Kinds carrying trainable parameters.
PARAMETERIZED_KINDS = ("Conv1D", "Dense", "BatchNorm", "Affine")


@dataclass(frozen=True)
class Shape:
    """channels x samples. Post-Flatten tensors use channels=1."""

    channels: int
    samples: int

    def __post_init__(self):
        if self.channels < 1 or self.samples < 1:
            raise ValueError(f"non-positive shape {self.channels}x{self.samples}")

    @property
    def size(self) -> int:
        return self.channels * self.samples


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    attrs: dict[str, Any] = field(default_factory=dict)
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def attr(self, name: str, default=None):
        return self.attrs.get(name, default)

    @property
    def fused_relu(self) -> bool:
        return bool(self.attrs.get("fused_relu", False))


@dataclass(frozen=True)
class Graph:
    nodes: dict[str, LayerNode]
    input_shape: Shape
    output: str

    def node(self, node_id: str) -> LayerNode:
        return self.nodes[node_id]

    @property
    def input_id(self) -> str:
        for node in self.nodes.values():
            if node.kind == "Input":
                return node.id
        raise KeyError("graph has no Input node")

    def replace(self, nodes: dict[str, LayerNode], output: str | None = None) -> "Graph":
        return Graph(nodes=nodes, input_shape=self.input_shape, output=output or self.output)


def consumers(graph: Graph) -> dict[str, list[str]]:
    """Map node id -> ids of nodes reading it, sorted for determinism."""
    out: dict[str, list[str]] = {node_id: [] for node_id in graph.nodes}
    for node in graph.nodes.values():
        for src in node.inputs:
            if src in out:
                out[src].append(node.id)
    return {k: sorted(v) for k, v in out.items()}


def topo_order(graph: Graph) -> list[str]:
    """Topological order of node ids, ties broken by ascending id.

    The fixed tie-break keeps downstream artifacts (allocation plans,
    generated code) byte-stable across runs.
    """
    indegree = {}
    dependents: dict[str, list[str]] = {node_id: [] for node_id in graph.nodes}
    for node in graph.nodes.values():
        refs = [src for src in node.inputs if src in graph.nodes]
        indegree[node.id] = len(refs)
        for src in refs:
            dependents[src].append(node.id)

    ready = [node_id for node_id, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        node_id = heapq.heappop(ready)
        order.append(node_id)
        for dep in dependents[node_id]:
            indegree[dep] -= 1
            if indegree[dep] == 0:
                heapq.heappush(ready, dep)
    if len(order) != len(graph.nodes):
        raise CycleDetected("graph contains a cycle")
    return order


def _window_out(samples: int, k: int, stride: int, pad_left: int = 0, pad_right: int = 0) -> int:
    padded = samples + pad_left + pad_right
    if padded < k:
        raise NonPositiveOutputLength(
            f"window of {k} exceeds padded input length {padded}"
        )
    return (padded - k) // stride + 1


def infer_shapes(graph: Graph) -> dict[str, Shape]:
    """Output shape per node id. Requires a validating graph."""
    shapes: dict[str, Shape] = {}
    for node_id in topo_order(graph):
        node = graph.nodes[node_id]
        if node.kind == "Input":
            shapes[node_id] = graph.input_shape
            continue
        src = shapes[node.inputs[0]]
        if node.kind == "Conv1D":
            out_s = _window_out(
                src.samples,
                node.attrs["kernel"],
                node.attrs["stride"],
                node.attrs["pad_left"],
                node.attrs["pad_right"],
            )
            shapes[node_id] = Shape(node.attrs["filters"], out_s)
        elif node.kind in ("MaxPool1D", "AvgPool1D"):
            out_s = _window_out(src.samples, node.attrs["pool"], node.attrs["stride"])
            shapes[node_id] = Shape(src.channels, out_s)
        elif node.kind == "Dense":
            shapes[node_id] = Shape(1, node.attrs["units"])
        elif node.kind == "Flatten":
            shapes[node_id] = Shape(1, src.size)
        elif node.kind == "ZeroPad1D":
            shapes[node_id] = Shape(
                src.channels,
                src.samples + node.attrs["pad_left"] + node.attrs["pad_right"],
            )
        elif node.kind in ("Add", "ReLU", "BatchNorm", "Affine", "SoftMax"):
            shapes[node_id] = src
        else:
            raise ValueError(f"unknown kind {node.kind!r}")
    return shapes


def _expected_weight_shapes(node: LayerNode, in_shape: Shape) -> dict[str, tuple[int, ...]]:
    if node.kind == "Conv1D":
        f, k = node.attrs["filters"], node.attrs["kernel"]
        return {"kernel": (f, in_shape.channels, k), "bias": (f,)}
    if node.kind == "Dense":
        u = node.attrs["units"]
        return {"kernel": (u, in_shape.size), "bias": (u,)}
    if node.kind == "BatchNorm":
        c = (in_shape.channels,)
        return {"mean": c, "variance": c, "gamma": c, "beta": c}
    if node.kind == "Affine":
        c = (in_shape.channels,)
        return {"scale": c, "offset": c}
    return {}


_REQUIRED_ATTRS = {
    "Conv1D": ("filters", "kernel", "stride", "pad_left", "pad_right"),
    "Dense": ("units",),
    "MaxPool1D": ("pool", "stride"),
    "AvgPool1D": ("pool", "stride"),
    "ZeroPad1D": ("pad_left", "pad_right"),
    "BatchNorm": ("epsilon",),
}


def validate(graph: Graph) -> list[str]:
    """All invariant violations, as human-readable strings. Empty means well-formed.

    Violations are data, not exceptions: a report lists everything wrong
    at once instead of failing on the first problem.
    """
    report: list[str] = []

    input_ids = [n.id for n in graph.nodes.values() if n.kind == "Input"]
    if len(input_ids) != 1:
        report.append(f"graph must have exactly one Input node, found {len(input_ids)}")

    if graph.output not in graph.nodes:
        report.append(f"output node {graph.output!r} does not exist")

    for node in graph.nodes.values():
        if node.kind not in KINDS:
            report.append(f"node {node.id!r}: unknown kind {node.kind!r}")
            continue
        for src in node.inputs:
            if src not in graph.nodes:
                report.append(f"node {node.id!r}: input {src!r} does not resolve")
        if node.kind == "Input":
            if node.inputs:
                report.append(f"node {node.id!r}: Input takes no inputs")
        elif node.kind == "Add":
            if len(node.inputs) < 2:
                report.append(f"node {node.id!r}: Add needs >= 2 inputs, has {len(node.inputs)}")
        elif len(node.inputs) != 1:
            report.append(
                f"node {node.id!r}: {node.kind} needs exactly 1 input, has {len(node.inputs)}"
            )
        for name in _REQUIRED_ATTRS.get(node.kind, ()):
            if name not in node.attrs:
                report.append(f"node {node.id!r}: missing attribute {name!r}")
        for name in ("filters", "kernel", "stride", "units", "pool"):
            value = node.attrs.get(name)
            if value is not None and value < 1:
                report.append(f"node {node.id!r}: {name} must be >= 1, got {value}")
        for name in ("pad_left", "pad_right"):
            value = node.attrs.get(name)
            if value is not None and value < 0:
                report.append(f"node {node.id!r}: {name} must be >= 0, got {value}")
        if node.attrs.get("fused_relu") and node.kind not in FUSABLE_RELU_KINDS:
            report.append(f"node {node.id!r}: {node.kind} cannot carry fused_relu")
        for arr in node.weights.values():
            if not np.all(np.isfinite(arr)):
                report.append(f"node {node.id!r}: non-finite weight values")
                break

    # Shape/weight checks assume structurally sound nodes; report what we
    # have if the structural pass already failed.
    if report:
        return report

    try:
        order = topo_order(graph)
    except CycleDetected:
        report.append("graph contains a cycle")
        return report

    try:
        shapes = infer_shapes(graph)
    except NonPositiveOutputLength as exc:
        report.append(f"shape inference failed: {exc}")
        return report

    for node_id in order:
        node = graph.nodes[node_id]
        if node.kind == "Input":
            continue
        in_shape = shapes[node.inputs[0]]
        if node.kind == "Add":
            shapes_in = {shapes[src] for src in node.inputs}
            if len(shapes_in) > 1:
                report.append(
                    f"node {node.id!r}: Add inputs have differing shapes "
                    f"{sorted((s.channels, s.samples) for s in shapes_in)}"
                )
        expected = _expected_weight_shapes(node, in_shape)
        for name, want in expected.items():
            if name not in node.weights:
                report.append(f"node {node.id!r}: missing weight array {name!r}")
            elif tuple(node.weights[name].shape) != want:
                report.append(
                    f"node {node.id!r}: weight {name!r} has shape "
                    f"{tuple(node.weights[name].shape)}, expected {want}"
                )
        for name in node.weights:
            if name not in expected:
                report.append(f"node {node.id!r}: unexpected weight array {name!r}")

    # Reachability and dead-node checks.
    if graph.output in graph.nodes:
        ancestors = set()
        stack = [graph.output]
        while stack:
            node_id = stack.pop()
            if node_id in ancestors:
                continue
            ancestors.add(node_id)
            stack.extend(graph.nodes[node_id].inputs)
        if input_ids and input_ids[0] not in ancestors:
            report.append("output is not reachable from the Input node")
        used = consumers(graph)
        for node_id in graph.nodes:
            if node_id != graph.output and not used[node_id]:
                report.append(f"node {node_id!r}: result is never consumed")

    return report


def parameter_count(graph: Graph) -> int:
    """Total stored weight/bias elements across the graph."""
    return int(sum(arr.size for node in graph.nodes.values() for arr in node.weights.values()))
