"""On-disk form of a QuantizedModel.

Layout under a directory:
    model.json       transformed graph (neutral model document)
    quant_info.json  width + per-node fractional bits + blob dtypes
    weights/<node>_kernel.bin / _bias.bin   little-endian integer blobs
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import model_io
from .errors import SchemaError
from .fxp import FixedTensor, QFormat, accumulator_dtype, container_dtype
from .quantizer import LayerQuantInfo, QuantizedModel

_LE = {np.dtype(np.int8): "<i1", np.dtype(np.int16): "<i2", np.dtype(np.int32): "<i4"}


def save_quantized_model(qmodel: QuantizedModel, directory) -> None:
    os.makedirs(os.path.join(directory, "weights"), exist_ok=True)
    model_io.save_model(qmodel.graph, os.path.join(directory, "model.json"))

    info = {"width": qmodel.width, "nodes": {}, "blobs": {}}
    for node_id, qi in qmodel.quant.items():
        info["nodes"][node_id] = {
            "input_frac": qi.input_frac,
            "output_frac": qi.output_frac,
            "weight_frac": qi.weight_frac,
            "bias_frac": qi.bias_frac,
        }
    for node_id, tensor in qmodel.weights.items():
        name = f"{node_id}_kernel.bin"
        data = tensor.data
        with open(os.path.join(directory, "weights", name), "wb") as fh:
            fh.write(data.astype(_LE[data.dtype]).tobytes())
        info["blobs"][name] = {"node": node_id, "role": "kernel", "shape": list(data.shape)}
    for node_id, bias in qmodel.biases.items():
        name = f"{node_id}_bias.bin"
        with open(os.path.join(directory, "weights", name), "wb") as fh:
            fh.write(bias.astype(_LE[bias.dtype]).tobytes())
        info["blobs"][name] = {"node": node_id, "role": "bias", "shape": list(bias.shape)}

    with open(os.path.join(directory, "quant_info.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_quantized_model(directory) -> QuantizedModel:
    graph = model_io.load_model(os.path.join(directory, "model.json"))
    with open(os.path.join(directory, "quant_info.json"), "r", encoding="utf-8") as fh:
        info = json.load(fh)

    width = info["width"]
    quant = {}
    for node_id, entry in info["nodes"].items():
        if node_id not in graph.nodes:
            raise SchemaError("$.nodes", f"quant info references unknown node {node_id!r}")
        quant[node_id] = LayerQuantInfo(
            input_frac=entry["input_frac"],
            output_frac=entry["output_frac"],
            weight_frac=entry["weight_frac"],
            bias_frac=entry["bias_frac"],
        )

    weights: dict[str, FixedTensor] = {}
    biases: dict[str, np.ndarray] = {}
    for name, meta in info["blobs"].items():
        path = os.path.join(directory, "weights", name)
        node_id = meta["node"]
        shape = tuple(meta["shape"])
        if meta["role"] == "kernel":
            dtype = container_dtype(width)
            raw = np.fromfile(path, dtype=_LE[dtype]).astype(dtype).reshape(shape)
            weights[node_id] = FixedTensor(raw, QFormat(width, quant[node_id].weight_frac))
        else:
            dtype = accumulator_dtype(width)
            biases[node_id] = np.fromfile(path, dtype=_LE[dtype]).astype(dtype).reshape(shape)

    return QuantizedModel(graph=graph, width=width, quant=quant, weights=weights, biases=biases)
