"""Shared test helpers: random model generation and a C compile-run harness."""

from __future__ import annotations

import os
import shutil
import subprocess

import numpy as np
import pytest

from nnc import codegen
from nnc.ir import Graph, LayerNode, Shape

GCC = shutil.which("gcc") or shutil.which("cc")

# Flags the generated code is specified against: C99 (keeps FP contraction
# off) and wrapping signed arithmetic to pin accumulator overflow behavior.
CFLAGS = ["-std=c99", "-O2", "-fwrapv", "-Wall"]


def compile_bundle(bundle, directory, float_mode: bool) -> str:
    """Write bundle + harness into directory, compile, return binary path."""
    bundle.write_to(directory)
    with open(os.path.join(directory, "main.c"), "w", encoding="utf-8") as fh:
        fh.write(codegen.render_harness(float_mode=float_mode))
    binary = os.path.join(directory, "model_bin")
    cmd = [GCC, *CFLAGS, "-o", binary,
           os.path.join(directory, "main.c"), os.path.join(directory, "model.c"), "-lm"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise AssertionError(f"cc failed:\n{proc.stderr}")
    return binary


def run_binary(binary: str, payload: bytes) -> list[str]:
    proc = subprocess.run([binary], input=payload, capture_output=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.decode().split()


class ModelBuilder:
    """Random valid 1D model graphs for property and oracle tests."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def _conv_weights(self, filters, channels, kernel, gain=1.0):
        # Per-output |weight| sum stays near `gain` so activations do not blow up.
        scale = gain / (channels * kernel)
        return {
            "kernel": self.rng.uniform(-scale, scale, (filters, channels, kernel)),
            "bias": self.rng.uniform(-0.2, 0.2, filters),
        }

    def _dense_weights(self, units, fan_in, gain=1.0):
        scale = gain / fan_in
        return {
            "kernel": self.rng.uniform(-scale, scale, (units, fan_in)),
            "bias": self.rng.uniform(-0.2, 0.2, units),
        }

    def random_model(
        self,
        *,
        residual: bool | None = None,
        with_batchnorm: bool = False,
        with_softmax: bool = False,
        unpadded_stride1: bool = False,
        min_blocks: int = 1,
        max_blocks: int = 3,
    ) -> Graph:
        rng = self.rng
        channels = int(rng.integers(1, 5))
        samples = int(rng.integers(12, 33))
        nodes: dict[str, LayerNode] = {"input": LayerNode(id="input", kind="Input")}
        shape = Shape(channels, samples)
        current = "input"
        counter = 0

        def fresh(kind_tag):
            nonlocal counter
            counter += 1
            return f"{kind_tag}{counter}"

        def add_node(kind, srcs, new_shape, attrs=None, weights=None, tag=None):
            nonlocal current, shape
            node_id = fresh(tag or kind.lower())
            nodes[node_id] = LayerNode(
                id=node_id, kind=kind, inputs=tuple(srcs), attrs=attrs or {}, weights=weights or {}
            )
            current = node_id
            shape = new_shape
            return node_id

        def conv(src, filters, kernel, stride, pad):
            in_shape = shape
            out_s = (in_shape.samples + pad[0] + pad[1] - kernel) // stride + 1
            return add_node(
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
                weights=self._conv_weights(filters, in_shape.channels, kernel),
            )

        def maybe_relu(p=0.6):
            if rng.random() < p:
                add_node("ReLU", [current], shape)

        if residual is None:
            residual = bool(rng.random() < 0.4)
        placed_residual = False

        blocks = int(rng.integers(min_blocks, max_blocks + 1))
        for block in range(blocks):
            choice = rng.random()
            want_residual = residual and (
                choice < 0.35 or (block == blocks - 1 and not placed_residual)
            )
            if want_residual:
                entry = current
                f = shape.channels
                # Shape-preserving branch so Add operands line up: padded k=3
                # when there is room, k=1 otherwise or when padding is
                # disallowed.
                if unpadded_stride1 or shape.samples < 8:
                    k, pad = 1, (0, 0)
                else:
                    k, pad = 3, (1, 1)
                conv(entry, f, k, 1, pad)
                add_node("ReLU", [current], shape)
                branch = conv(current, f, k, 1, pad)
                add_node("Add", [branch, entry], shape, tag="addres")
                maybe_relu(0.8)
                placed_residual = True
            elif choice < 0.6 and shape.samples >= 6:
                f = int(rng.integers(1, 6))
                k = int(rng.integers(1, 4))
                stride = 1 if unpadded_stride1 else int(rng.integers(1, 3))
                if unpadded_stride1:
                    pad = (0, 0)
                else:
                    pad = (int(rng.integers(0, 2)), int(rng.integers(0, 2)))
                if shape.samples + pad[0] + pad[1] >= k:
                    if pad != (0, 0) and rng.random() < 0.5:
                        # Explicit padding node (sole consumer: the conv), so
                        # the padding-fold pass has real work on random graphs.
                        add_node(
                            "ZeroPad1D",
                            [current],
                            Shape(shape.channels, shape.samples + pad[0] + pad[1]),
                            attrs={"pad_left": pad[0], "pad_right": pad[1]},
                        )
                        pad = (0, 0)
                    conv(current, f, k, stride, pad)
                    maybe_relu()
                    if with_batchnorm and rng.random() < 0.5:
                        c = shape.channels
                        add_node(
                            "BatchNorm",
                            [current],
                            shape,
                            attrs={"epsilon": 1e-3},
                            weights={
                                "mean": rng.uniform(-0.3, 0.3, c),
                                "variance": rng.uniform(0.5, 2.0, c),
                                "gamma": rng.uniform(0.7, 1.3, c),
                                "beta": rng.uniform(-0.3, 0.3, c),
                            },
                        )
            elif choice < 0.8 and shape.samples >= 4:
                pool = int(rng.integers(2, 4))
                stride = pool
                if shape.samples >= pool:
                    kind = "MaxPool1D" if rng.random() < 0.6 else "AvgPool1D"
                    out_s = (shape.samples - pool) // stride + 1
                    add_node(kind, [current], Shape(shape.channels, out_s),
                             attrs={"pool": pool, "stride": stride})
                    maybe_relu(0.3)

        units = int(rng.integers(2, 6))
        flat = add_node("Flatten", [current], Shape(1, shape.size))
        add_node(
            "Dense",
            [flat],
            Shape(1, units),
            attrs={"units": units},
            weights=self._dense_weights(units, shape.size),
        )
        if with_softmax:
            add_node("SoftMax", [current], shape)
        return Graph(nodes=nodes, input_shape=Shape(channels, samples), output=current)

    def random_input(self, graph: Graph) -> np.ndarray:
        return self.rng.uniform(
            -1.0, 1.0, (graph.input_shape.channels, graph.input_shape.samples)
        )


@pytest.fixture
def model_builder():
    return ModelBuilder(np.random.default_rng(0xA11CE))


def make_builder(seed: int) -> ModelBuilder:
    return ModelBuilder(np.random.default_rng(seed))
