"""Semantics-preserving graph rewrites applied before quantization/codegen.

All passes are pure: they return a new Graph and never mutate the input.
Pass order in run_pipeline is fixed: SoftMax removal first (so later
passes see the real output), padding folding before any codegen-facing
assumption, BatchNorm folding, and ReLU fusion last so it can absorb
activations behind Add nodes.
"""

from __future__ import annotations

import numpy as np

from . import ir
from .errors import DegenerateVariance, InteriorSoftmax, UnfusablePadding
from .ir import Graph, LayerNode


def remove_softmax(graph: Graph) -> Graph:
    """Drop a terminal SoftMax; argmax of the output is unchanged."""
    softmax_ids = [n.id for n in graph.nodes.values() if n.kind == "SoftMax"]
    for node_id in softmax_ids:
        if node_id != graph.output:
            raise InteriorSoftmax(f"SoftMax node {node_id!r} is not the graph output")
    if not softmax_ids:
        return graph
    terminal = graph.nodes[graph.output]
    nodes = {k: v for k, v in graph.nodes.items() if k != terminal.id}
    return graph.replace(nodes, output=terminal.inputs[0])


def fold_zero_padding(graph: Graph) -> Graph:
    """Merge each ZeroPad1D into the Conv1D consuming it."""
    pads = [n for n in graph.nodes.values() if n.kind == "ZeroPad1D"]
    if not pads:
        return graph
    users = ir.consumers(graph)
    nodes = dict(graph.nodes)
    for pad in pads:
        pad_users = users[pad.id]
        if len(pad_users) != 1 or nodes[pad_users[0]].kind != "Conv1D":
            raise UnfusablePadding(
                f"ZeroPad1D {pad.id!r} must feed exactly one Conv1D, feeds {pad_users}"
            )
        conv = nodes[pad_users[0]]
        attrs = dict(conv.attrs)
        attrs["pad_left"] = attrs["pad_left"] + pad.attrs["pad_left"]
        attrs["pad_right"] = attrs["pad_right"] + pad.attrs["pad_right"]
        nodes[conv.id] = LayerNode(
            id=conv.id,
            kind=conv.kind,
            inputs=pad.inputs,
            attrs=attrs,
            weights=conv.weights,
        )
        del nodes[pad.id]
    return graph.replace(nodes)


def fold_batchnorm(graph: Graph) -> Graph:
    """Rewrite BatchNorm into a per-channel affine y = scale*x + offset.

    scale = gamma / sqrt(variance + eps)
    offset = beta - gamma * mean / sqrt(variance + eps)

    The affine stays a standalone node; it is not merged into a
    preceding convolution.
    """
    nodes = dict(graph.nodes)
    for node in graph.nodes.values():
        if node.kind != "BatchNorm":
            continue
        var = node.weights["variance"] + node.attrs["epsilon"]
        if np.any(var <= 0):
            raise DegenerateVariance(
                f"BatchNorm {node.id!r}: variance + epsilon must be > 0"
            )
        sigma = np.sqrt(var)
        scale = node.weights["gamma"] / sigma
        offset = node.weights["beta"] - node.weights["gamma"] * node.weights["mean"] / sigma
        nodes[node.id] = LayerNode(
            id=node.id,
            kind="Affine",
            inputs=node.inputs,
            weights={"scale": scale, "offset": offset},
        )
    return graph.replace(nodes)


def fuse_relu(graph: Graph) -> Graph:
    """Fold standalone ReLU nodes into their producing Conv1D/MaxPool1D/Dense/Add.

    Fusion requires the ReLU to be the producer's only consumer,
    otherwise siblings would observe clamped values. ReLUs behind other
    kinds stay standalone. Runs to a fixpoint so ReLU chains collapse.
    """
    nodes = dict(graph.nodes)
    output = graph.output
    changed = True
    while changed:
        changed = False
        current = Graph(nodes=nodes, input_shape=graph.input_shape, output=output)
        users = ir.consumers(current)
        for node in list(nodes.values()):
            if node.kind != "ReLU":
                continue
            producer = nodes[node.inputs[0]]
            if producer.kind not in ir.FUSABLE_RELU_KINDS:
                continue
            if users[producer.id] != [node.id]:
                continue
            attrs = dict(producer.attrs)
            attrs["fused_relu"] = True
            nodes[producer.id] = LayerNode(
                id=producer.id,
                kind=producer.kind,
                inputs=producer.inputs,
                attrs=attrs,
                weights=producer.weights,
            )
            del nodes[node.id]
            for consumer_id in users[node.id]:
                consumer = nodes[consumer_id]
                nodes[consumer_id] = LayerNode(
                    id=consumer.id,
                    kind=consumer.kind,
                    inputs=tuple(
                        producer.id if src == node.id else src for src in consumer.inputs
                    ),
                    attrs=consumer.attrs,
                    weights=consumer.weights,
                )
            if output == node.id:
                output = producer.id
            changed = True
            break
    return graph.replace(nodes, output=output)


def run_pipeline(graph: Graph) -> Graph:
    graph = remove_softmax(graph)
    graph = fold_zero_padding(graph)
    graph = fold_batchnorm(graph)
    graph = fuse_relu(graph)
    return graph
