"""Model topology builders.

Weights are randomly initialized (He-style for kernels) from a seedable
generator; callers wanting trained weights load them from a model
document instead.
"""

from __future__ import annotations

import numpy as np

from .ir import Graph, LayerNode, Shape

_DEFAULT_SEED = 0x5EED


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(_DEFAULT_SEED)


def _conv_weights(rng, filters: int, channels: int, kernel: int):
    fan_in = channels * kernel
    return {
        "kernel": rng.standard_normal((filters, channels, kernel)) * np.sqrt(2.0 / fan_in),
        "bias": rng.uniform(-0.1, 0.1, filters),
    }


def _dense_weights(rng, units: int, fan_in: int):
    return {
        "kernel": rng.standard_normal((units, fan_in)) * np.sqrt(1.0 / fan_in),
        "bias": rng.uniform(-0.1, 0.1, units),
    }


def _bn_weights(rng, channels: int):
    return {
        "mean": rng.standard_normal(channels) * 0.1,
        "variance": rng.uniform(0.5, 1.5, channels),
        "gamma": rng.uniform(0.8, 1.2, channels),
        "beta": rng.standard_normal(channels) * 0.1,
    }


class _Builder:
    """Accumulates nodes with shape tracking for sequential construction."""

    def __init__(self, input_shape: Shape):
        self.nodes: dict[str, LayerNode] = {"input": LayerNode(id="input", kind="Input")}
        self.shapes: dict[str, Shape] = {"input": input_shape}
        self.input_shape = input_shape

    def add(self, node_id, kind, srcs, shape, attrs=None, weights=None) -> str:
        self.nodes[node_id] = LayerNode(
            id=node_id,
            kind=kind,
            inputs=tuple(srcs),
            attrs=attrs or {},
            weights=weights or {},
        )
        self.shapes[node_id] = shape
        return node_id

    def conv(self, node_id, src, rng, filters, kernel, stride=1, pad=(0, 0)) -> str:
        in_shape = self.shapes[src]
        out_s = (in_shape.samples + pad[0] + pad[1] - kernel) // stride + 1
        return self.add(
            node_id,
            "Conv1D",
            [src],
            Shape(filters, out_s),
            attrs={
                "filters": filters,
                "kernel": kernel,
                "stride": stride,
                "pad_left": pad[0],
                "pad_right": pad[1],
            },
            weights=_conv_weights(rng, filters, in_shape.channels, kernel),
        )

    def pad(self, node_id, src, left, right) -> str:
        in_shape = self.shapes[src]
        return self.add(
            node_id,
            "ZeroPad1D",
            [src],
            Shape(in_shape.channels, in_shape.samples + left + right),
            attrs={"pad_left": left, "pad_right": right},
        )

    def relu(self, node_id, src) -> str:
        return self.add(node_id, "ReLU", [src], self.shapes[src])

    def batch_norm(self, node_id, src, rng, epsilon=1e-3) -> str:
        in_shape = self.shapes[src]
        return self.add(
            node_id,
            "BatchNorm",
            [src],
            in_shape,
            attrs={"epsilon": epsilon},
            weights=_bn_weights(rng, in_shape.channels),
        )

    def graph(self, output: str) -> Graph:
        return Graph(nodes=self.nodes, input_shape=self.input_shape, output=output)


def build_resnet_v1_6(filters: int, input_shape: Shape, classes: int, *,
                      batch_norm: bool = False, rng=None) -> Graph:
    """Six-layer 1D residual network: conv stem, a stride-2 downsampling
    residual block with a 1x1 convolution shortcut, an identity residual
    block, global average pooling and a dense classifier. All ReLU
    activations; no terminal SoftMax (inference-only graphs do not need
    one).
    """
    if filters < 1:
        raise ValueError("filters must be >= 1")
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = _rng(rng)
    b = _Builder(input_shape)

    def conv_block(tag, src, stride):
        padded = b.pad(f"{tag}_pad", src, 1, 1)
        return b.conv(f"{tag}", padded, rng, filters, 3, stride=stride)

    def maybe_bn(tag, src):
        if batch_norm:
            return b.batch_norm(f"{tag}_bn", src, rng)
        return src

    stem = conv_block("conv1", "input", 1)
    stem = maybe_bn("conv1", stem)
    stem = b.relu("relu1", stem)

    # Downsampling block: stride-2 main path, 1x1 stride-2 shortcut.
    x = conv_block("conv2", stem, 2)
    x = maybe_bn("conv2", x)
    x = b.relu("relu2", x)
    x = conv_block("conv3", x, 1)
    x = maybe_bn("conv3", x)
    shortcut = b.conv("short1", stem, rng, filters, 1, stride=2)
    x = b.add("add1", "Add", [x, shortcut], b.shapes[x])
    x = b.relu("relu3", x)

    # Identity block.
    y = conv_block("conv4", x, 1)
    y = maybe_bn("conv4", y)
    y = b.relu("relu4", y)
    y = conv_block("conv5", y, 1)
    y = maybe_bn("conv5", y)
    y = b.add("add2", "Add", [y, x], b.shapes[y])
    y = b.relu("relu5", y)

    # Global average pooling collapses the time axis for the classifier.
    final_s = b.shapes[y].samples
    pool = b.add(
        "pool",
        "AvgPool1D",
        [y],
        Shape(filters, 1),
        attrs={"pool": final_s, "stride": final_s},
    )
    flat = b.add("flatten", "Flatten", [pool], Shape(1, filters))
    dense = b.add(
        "dense",
        "Dense",
        [flat],
        Shape(1, classes),
        attrs={"units": classes},
        weights=_dense_weights(rng, classes, filters),
    )
    return b.graph(dense)


def build_cnn(conv_layers: int, filters: int, kernel: int, pool: int,
              input_shape: Shape, classes: int, *, fc_neurons: int = 0,
              rng=None) -> Graph:
    """Sequential Conv1D(+ReLU)+MaxPool1D stacks with a dense classifier.

    Convolutions are unpadded; an optional hidden dense layer sits
    between Flatten and the classifier.
    """
    if conv_layers < 1 or filters < 1 or kernel < 1 or pool < 1:
        raise ValueError("conv_layers, filters, kernel and pool must be >= 1")
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = _rng(rng)
    b = _Builder(input_shape)

    x = "input"
    for i in range(conv_layers):
        x = b.conv(f"conv{i + 1}", x, rng, filters, kernel)
        x = b.relu(f"relu{i + 1}", x)
        in_shape = b.shapes[x]
        out_s = (in_shape.samples - pool) // pool + 1
        x = b.add(
            f"pool{i + 1}",
            "MaxPool1D",
            [x],
            Shape(in_shape.channels, out_s),
            attrs={"pool": pool, "stride": pool},
        )

    flat_len = b.shapes[x].size
    x = b.add("flatten", "Flatten", [x], Shape(1, flat_len))
    if fc_neurons:
        x = b.add(
            "fc1",
            "Dense",
            [x],
            Shape(1, fc_neurons),
            attrs={"units": fc_neurons},
            weights=_dense_weights(rng, fc_neurons, flat_len),
        )
        x = b.relu("fc1_relu", x)
        flat_len = fc_neurons
    x = b.add(
        "dense",
        "Dense",
        [x],
        Shape(1, classes),
        attrs={"units": classes},
        weights=_dense_weights(rng, classes, flat_len),
    )
    return b.graph(x)


def build_mlp(layers: int, neurons: int, input_shape: Shape, classes: int, *,
              rng=None) -> Graph:
    """Dense-only stack: layers-1 hidden Dense+ReLU pairs, then the classifier.

    `layers` counts every Dense layer including the final classifier.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if neurons < 1:
        raise ValueError("neurons must be >= 1")
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = _rng(rng)
    b = _Builder(input_shape)

    x = b.add("flatten", "Flatten", ["input"], Shape(1, input_shape.size))
    fan_in = input_shape.size
    for i in range(layers - 1):
        x = b.add(
            f"dense{i + 1}",
            "Dense",
            [x],
            Shape(1, neurons),
            attrs={"units": neurons},
            weights=_dense_weights(rng, neurons, fan_in),
        )
        x = b.relu(f"relu{i + 1}", x)
        fan_in = neurons
    x = b.add(
        f"dense{layers}",
        "Dense",
        [x],
        Shape(1, classes),
        attrs={"units": classes},
        weights=_dense_weights(rng, classes, fan_in),
    )
    return b.graph(x)
