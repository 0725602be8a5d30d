"""Neutral JSON model document <-> Graph.

The document declares the input tensor shape under "input"; the loader
synthesizes the single Input node from it under the reserved id "input".
Node declarations therefore never carry kind "Input". Unknown keys are
rejected everywhere so that typos fail loudly instead of silently
dropping configuration.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .errors import SchemaError, VersionError
from .ir import Graph, LayerNode, Shape

FORMAT_VERSION = 1
INPUT_NODE_ID = "input"

# attr name -> (json type, required) per kind; fused_relu handled separately.
_ATTR_SPEC = {
    "Conv1D": {
        "filters": int,
        "kernel": int,
        "stride": int,
        "pad_left": int,
        "pad_right": int,
    },
    "Dense": {"units": int},
    "MaxPool1D": {"pool": int, "stride": int},
    "AvgPool1D": {"pool": int, "stride": int},
    "ZeroPad1D": {"pad_left": int, "pad_right": int},
    "BatchNorm": {"epsilon": float},
    "Affine": {},
    "Add": {},
    "ReLU": {},
    "Flatten": {},
    "SoftMax": {},
}

_WEIGHT_KEYS = {
    "Conv1D": ("kernel", "bias"),
    "Dense": ("kernel", "bias"),
    "BatchNorm": ("mean", "variance", "gamma", "beta"),
    "Affine": ("scale", "offset"),
}

_FUSED_RELU_KINDS = ("Conv1D", "MaxPool1D", "Dense", "Add")


def _require_keys(obj: dict, allowed: set[str], required: set[str], path: str):
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{path}.{key}", "missing required key")


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected integer, got {type(value).__name__}")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected number, got {type(value).__name__}")
    return float(value)


def _as_array(value, path: str) -> np.ndarray:
    """Nested lists of numbers -> float64 ndarray; ragged nesting is rejected."""

    def walk(node, sub):
        if isinstance(node, list):
            return [walk(item, f"{sub}[{i}]") for i, item in enumerate(node)]
        return _as_number(node, sub)

    data = walk(value, path)
    try:
        arr = np.asarray(data, dtype=np.float64)
    except ValueError:
        raise SchemaError(path, "ragged weight array") from None
    if arr.ndim == 0:
        raise SchemaError(path, "weight must be an array, not a scalar")
    return arr


def _load_node(obj: Any, path: str) -> LayerNode:
    if not isinstance(obj, dict):
        raise SchemaError(path, "node must be an object")
    _require_keys(obj, {"id", "kind", "inputs", "attrs", "weights"}, {"id", "kind", "inputs"}, path)

    node_id = obj["id"]
    if not isinstance(node_id, str) or not node_id:
        raise SchemaError(f"{path}.id", "id must be a non-empty string")
    if node_id == INPUT_NODE_ID:
        raise SchemaError(f"{path}.id", f"id {INPUT_NODE_ID!r} is reserved for the input")

    kind = obj["kind"]
    if kind not in _ATTR_SPEC:
        raise SchemaError(f"{path}.kind", f"unknown kind {kind!r}")

    inputs = obj["inputs"]
    if not isinstance(inputs, list) or not all(isinstance(x, str) for x in inputs):
        raise SchemaError(f"{path}.inputs", "inputs must be a list of node ids")

    attrs: dict[str, Any] = {}
    raw_attrs = obj.get("attrs", {})
    if not isinstance(raw_attrs, dict):
        raise SchemaError(f"{path}.attrs", "attrs must be an object")
    spec = _ATTR_SPEC[kind]
    allowed = set(spec)
    if kind in _FUSED_RELU_KINDS:
        allowed.add("fused_relu")
    _require_keys(raw_attrs, allowed, set(spec), f"{path}.attrs")
    for name, typ in spec.items():
        value = raw_attrs[name]
        attrs[name] = (
            _as_int(value, f"{path}.attrs.{name}")
            if typ is int
            else _as_number(value, f"{path}.attrs.{name}")
        )
    if "fused_relu" in raw_attrs:
        if not isinstance(raw_attrs["fused_relu"], bool):
            raise SchemaError(f"{path}.attrs.fused_relu", "expected boolean")
        attrs["fused_relu"] = raw_attrs["fused_relu"]

    weights: dict[str, np.ndarray] = {}
    raw_weights = obj.get("weights", {})
    if not isinstance(raw_weights, dict):
        raise SchemaError(f"{path}.weights", "weights must be an object")
    keys = _WEIGHT_KEYS.get(kind, ())
    _require_keys(raw_weights, set(keys), set(keys), f"{path}.weights")
    for name in keys:
        weights[name] = _as_array(raw_weights[name], f"{path}.weights.{name}")

    return LayerNode(id=node_id, kind=kind, inputs=tuple(inputs), attrs=attrs, weights=weights)


def graph_from_document(doc: Any) -> Graph:
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be an object")
    _require_keys(
        doc,
        {"format_version", "input", "nodes", "output"},
        {"format_version", "input", "nodes", "output"},
        "$",
    )

    version = doc["format_version"]
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}")

    raw_input = doc["input"]
    if not isinstance(raw_input, dict):
        raise SchemaError("$.input", "input must be an object")
    _require_keys(raw_input, {"channels", "samples"}, {"channels", "samples"}, "$.input")
    channels = _as_int(raw_input["channels"], "$.input.channels")
    samples = _as_int(raw_input["samples"], "$.input.samples")
    if channels < 1 or samples < 1:
        raise SchemaError("$.input", "channels and samples must be >= 1")

    if not isinstance(doc["nodes"], list):
        raise SchemaError("$.nodes", "nodes must be a list")
    nodes: dict[str, LayerNode] = {
        INPUT_NODE_ID: LayerNode(id=INPUT_NODE_ID, kind="Input")
    }
    for i, raw in enumerate(doc["nodes"]):
        node = _load_node(raw, f"$.nodes[{i}]")
        if node.id in nodes:
            raise SchemaError(f"$.nodes[{i}].id", f"duplicate node id {node.id!r}")
        nodes[node.id] = node

    output = doc["output"]
    if not isinstance(output, str):
        raise SchemaError("$.output", "output must be a node id string")

    return Graph(nodes=nodes, input_shape=Shape(channels, samples), output=output)


def graph_to_document(graph: Graph) -> dict:
    nodes = []
    for node in graph.nodes.values():
        if node.kind == "Input":
            continue
        entry: dict[str, Any] = {
            "id": node.id,
            "kind": node.kind,
            "inputs": list(node.inputs),
        }
        if node.attrs:
            entry["attrs"] = {
                k: (bool(v) if k == "fused_relu" else v) for k, v in node.attrs.items()
            }
        if node.weights:
            entry["weights"] = {k: v.tolist() for k, v in node.weights.items()}
        nodes.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "input": {"channels": graph.input_shape.channels, "samples": graph.input_shape.samples},
        "nodes": nodes,
        "output": graph.output,
    }


def load_model(path) -> Graph:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from None
    return graph_from_document(doc)


def save_model(graph: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_document(graph), fh, indent=1)
        fh.write("\n")
