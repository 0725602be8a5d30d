"""Convert a trained Keras model into the neutral JSON model document.

The document layout is the nnc model schema: tensors are
(channels, samples), convolution kernels are [filter][in_channel][tap],
dense kernels [unit][in_feature]. Keras is channels-last, so kernels are
transposed here, once, at export time.

One subtlety is Flatten: Keras flattens (steps, channels) step-major,
the document's Flatten yields channel-major features. The exporter
tracks that pending permutation and reorders the columns of the next
Dense kernel, so downstream predictions match exactly. A permuted flat
tensor that reaches the model output without a Dense to absorb the
reordering cannot be represented and is rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class UnsupportedLayer(Exception):
    """Model uses a layer (or layer option) outside the deployable set."""


@dataclass
class ExportManifest:
    source: str
    layer_map: dict[str, list[str]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "source": self.source,
            "layer_map": self.layer_map,
            "warnings": self.warnings,
        }


_ELEMENTWISE = ("ReLU", "Activation", "Softmax")


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    out = math.ceil(length / stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def _history_names(obj, into: list):
    """Collect predecessor layer names from serialized inbound node args."""
    if isinstance(obj, dict):
        if obj.get("class_name") == "__keras_tensor__":
            into.append(obj["config"]["keras_history"][0])
            return
        for value in obj.values():
            _history_names(value, into)
    elif isinstance(obj, (list, tuple)):
        for value in obj:
            _history_names(value, into)


class _Exporter:
    def __init__(self, model, source: str):
        self.model = model
        self.manifest = ExportManifest(source=source)
        self.nodes: list[dict] = []
        self.used_ids: set[str] = {"input"}
        # keras layer name -> (our node id of its output, flat permutation tag)
        self.result: dict[str, tuple[str, tuple[int, int] | None]] = {}

    # -- helpers -----------------------------------------------------------

    def _fresh_id(self, base: str) -> str:
        name = base
        counter = 1
        while name in self.used_ids:
            counter += 1
            name = f"{base}_{counter}"
        self.used_ids.add(name)
        return name

    def _emit(self, keras_name: str, base_id: str, kind: str, inputs: list[str],
              attrs: dict | None = None, weights: dict | None = None) -> str:
        node_id = self._fresh_id(base_id)
        entry: dict = {"id": node_id, "kind": kind, "inputs": inputs}
        if attrs:
            entry["attrs"] = attrs
        if weights:
            entry["weights"] = {k: np.asarray(v, dtype=np.float64).tolist()
                                for k, v in weights.items()}
        self.nodes.append(entry)
        self.manifest.layer_map.setdefault(keras_name, []).append(node_id)
        return node_id

    @staticmethod
    def _shape_2d(shape) -> tuple[int, int]:
        """Keras (batch, steps, channels) or (batch, features) -> (channels, samples)."""
        dims = [int(d) for d in list(shape)[1:]]
        if len(dims) == 2:
            steps, channels = dims
            return channels, steps
        if len(dims) == 1:
            return 1, dims[0]
        raise UnsupportedLayer(f"rank-{len(dims) + 1} tensors are not deployable")

    def _activation_node(self, keras_name: str, activation: str, src: str,
                         tag) -> tuple[str, tuple[int, int] | None]:
        if activation in (None, "linear"):
            return src, tag
        if activation == "relu":
            return self._emit(keras_name, f"{keras_name}_relu", "ReLU", [src]), tag
        if activation == "softmax":
            return self._emit(keras_name, f"{keras_name}_softmax", "SoftMax", [src]), tag
        raise UnsupportedLayer(f"{keras_name}: activation {activation!r}")

    # -- per-layer handlers --------------------------------------------------

    def handle(self, class_name: str, name: str, config: dict, sources: list[str]):
        layer = self.model.get_layer(name)
        inputs = [self.result[s][0] for s in sources]
        tags = [self.result[s][1] for s in sources]

        if class_name == "Conv1D":
            self._check_conv(name, config)
            src_c, src_s = self._shape_2d(layer.input.shape)
            stride = int(config["strides"][0])
            kernel = int(config["kernel_size"][0])
            if config["padding"] == "same":
                pad = _same_padding(src_s, kernel, stride)
            else:
                pad = (0, 0)
            if tags[0] is not None:
                raise UnsupportedLayer(f"{name}: Conv1D over flattened features")
            kernel_arr = layer.kernel.numpy().transpose(2, 1, 0)
            bias = (layer.bias.numpy() if config.get("use_bias", True)
                    else np.zeros(kernel_arr.shape[0], dtype=np.float32))
            node = self._emit(
                name, name, "Conv1D", inputs,
                attrs={"filters": int(config["filters"]), "kernel": kernel,
                       "stride": stride, "pad_left": pad[0], "pad_right": pad[1]},
                weights={"kernel": kernel_arr, "bias": bias},
            )
            out, tag = self._activation_node(name, config.get("activation"), node, None)
            self.result[name] = (out, tag)

        elif class_name == "Dense":
            kernel = layer.kernel.numpy().T  # (units, in_features)
            bias = (layer.bias.numpy() if config.get("use_bias", True)
                    else np.zeros(kernel.shape[0], dtype=np.float32))
            in_c, in_s = self._shape_2d(layer.input.shape)
            if in_c != 1:
                raise UnsupportedLayer(
                    f"{name}: Dense over a {in_c}-channel tensor (flatten first)"
                )
            tag = tags[0]
            if tag is not None:
                samples, channels = tag
                j = np.arange(samples * channels)
                kernel = kernel[:, (j % samples) * channels + j // samples]
                self.manifest.warnings.append(
                    f"{name}: dense kernel columns reordered to channel-major "
                    f"(flattened {channels}x{samples} input)"
                )
            node = self._emit(
                name, name, "Dense", inputs,
                attrs={"units": int(config["units"])},
                weights={"kernel": kernel, "bias": bias},
            )
            out, tag = self._activation_node(name, config.get("activation"), node, None)
            self.result[name] = (out, tag)

        elif class_name in ("MaxPooling1D", "AveragePooling1D"):
            if config.get("padding", "valid") != "valid":
                raise UnsupportedLayer(f"{name}: pooling requires valid padding")
            pool = int(config["pool_size"][0])
            strides = config.get("strides")
            stride = pool if strides is None else int(strides[0])
            kind = "MaxPool1D" if class_name == "MaxPooling1D" else "AvgPool1D"
            node = self._emit(name, name, kind, inputs,
                              attrs={"pool": pool, "stride": stride})
            self.result[name] = (node, tags[0])

        elif class_name == "GlobalAveragePooling1D":
            if config.get("keepdims"):
                raise UnsupportedLayer(f"{name}: keepdims is not supported")
            src_c, src_s = self._shape_2d(layer.input.shape)
            pool = self._emit(name, f"{name}_pool", "AvgPool1D", inputs,
                              attrs={"pool": src_s, "stride": src_s})
            flat = self._emit(name, f"{name}_flatten", "Flatten", [pool])
            # (channels, 1) flattens without reordering.
            self.result[name] = (flat, None)

        elif class_name == "BatchNormalization":
            axis = config.get("axis", -1)
            if isinstance(axis, (list, tuple)):
                axis = axis[0]
            if axis not in (-1, 2):
                raise UnsupportedLayer(f"{name}: BatchNorm axis must be channels-last")
            channels = int(layer.input.shape[-1])
            gamma = (layer.gamma.numpy() if config.get("scale", True)
                     else np.ones(channels, dtype=np.float32))
            beta = (layer.beta.numpy() if config.get("center", True)
                    else np.zeros(channels, dtype=np.float32))
            node = self._emit(
                name, name, "BatchNorm", inputs,
                attrs={"epsilon": float(config["epsilon"])},
                weights={
                    "mean": layer.moving_mean.numpy(),
                    "variance": layer.moving_variance.numpy(),
                    "gamma": gamma,
                    "beta": beta,
                },
            )
            self.result[name] = (node, tags[0])

        elif class_name == "Add":
            if len(set(tags)) > 1:
                raise UnsupportedLayer(f"{name}: Add over differently ordered tensors")
            node = self._emit(name, name, "Add", inputs)
            self.result[name] = (node, tags[0])

        elif class_name == "ReLU":
            if config.get("max_value") is not None or config.get("negative_slope", 0.0) \
                    or config.get("threshold", 0.0):
                raise UnsupportedLayer(f"{name}: only plain ReLU is supported")
            node = self._emit(name, name, "ReLU", inputs)
            self.result[name] = (node, tags[0])

        elif class_name == "Activation":
            out, tag = self._activation_node(name, config.get("activation"), inputs[0],
                                             tags[0])
            if out == inputs[0]:
                self.manifest.warnings.append(f"{name}: linear activation dropped")
            self.result[name] = (out, tag)

        elif class_name == "Softmax":
            axis = config.get("axis", -1)
            if axis not in (-1, 1, 2):
                raise UnsupportedLayer(f"{name}: softmax axis {axis}")
            node = self._emit(name, name, "SoftMax", inputs)
            self.result[name] = (node, tags[0])

        elif class_name == "ZeroPadding1D":
            padding = config["padding"]
            if isinstance(padding, int):
                padding = (padding, padding)
            node = self._emit(name, name, "ZeroPad1D", inputs,
                              attrs={"pad_left": int(padding[0]),
                                     "pad_right": int(padding[1])})
            self.result[name] = (node, tags[0])

        elif class_name == "Flatten":
            channels, steps = self._shape_2d(layer.input.shape)
            node = self._emit(name, name, "Flatten", inputs)
            tag = (steps, channels) if (channels > 1 and steps > 1) else None
            self.result[name] = (node, tag)

        elif class_name in ("Dropout", "SpatialDropout1D"):
            self.manifest.warnings.append(f"{name}: {class_name} dropped (inference no-op)")
            self.result[name] = (inputs[0], tags[0])

        else:
            raise UnsupportedLayer(f"{name}: layer kind {class_name} is not deployable")

    def _check_conv(self, name: str, config: dict):
        if config.get("data_format", "channels_last") != "channels_last":
            raise UnsupportedLayer(f"{name}: channels_first is not supported")
        if list(config.get("dilation_rate", [1])) != [1]:
            raise UnsupportedLayer(f"{name}: dilated convolutions are not supported")
        if config.get("groups", 1) != 1:
            raise UnsupportedLayer(f"{name}: grouped convolutions are not supported")
        if config.get("padding") == "causal":
            raise UnsupportedLayer(f"{name}: causal padding is not supported")


def _as_triples(value) -> list:
    """Keras serializes a single endpoint as [name, n, t], several as a list
    of such triples; normalize to the latter."""
    if value and isinstance(value[0], str):
        return [value]
    return list(value)


def _layer_graph(model):
    """(ordered [(class_name, name, config, source layer names)], input name, output name)."""
    config = model.get_config()
    if "input_layers" in config:
        entries = []
        input_names = []
        for raw in config["layers"]:
            sources: list[str] = []
            _history_names(raw.get("inbound_nodes", []), sources)
            if raw["class_name"] == "InputLayer":
                input_names.append(raw["config"]["name"])
                continue
            entries.append((raw["class_name"], raw["config"]["name"],
                            raw["config"], sources))
        if len(input_names) != 1:
            raise UnsupportedLayer(f"model must have exactly one input, has {len(input_names)}")
        outputs = _as_triples(config["output_layers"])
        if len(outputs) != 1:
            raise UnsupportedLayer(f"model must have exactly one output, has {len(outputs)}")
        return entries, input_names[0], outputs[0][0]

    # Sequential: implicit chain.
    entries = []
    previous = "__input__"
    for raw in config["layers"]:
        if raw["class_name"] == "InputLayer":
            continue
        name = raw["config"]["name"]
        entries.append((raw["class_name"], name, raw["config"], [previous]))
        previous = name
    if not entries:
        raise UnsupportedLayer("model has no layers")
    return entries, "__input__", entries[-1][1]


def export_model(model, source: str = "<in-memory>") -> tuple[dict, ExportManifest]:
    entries, input_name, output_name = _layer_graph(model)
    exporter = _Exporter(model, source)
    channels, samples = exporter._shape_2d(model.inputs[0].shape)
    exporter.result[input_name] = ("input", None)
    exporter.manifest.layer_map[input_name] = ["input"]

    for class_name, name, config, sources in entries:
        exporter.handle(class_name, name, config, sources)

    output_id, output_tag = exporter.result[output_name]
    if output_tag is not None:
        raise UnsupportedLayer(
            "model output is a reordered flattened tensor; add a Dense layer "
            "after Flatten or end on channel-compatible shapes"
        )
    document = {
        "format_version": 1,
        "input": {"channels": channels, "samples": samples},
        "nodes": exporter.nodes,
        "output": output_id,
    }
    return document, exporter.manifest


def export_file(model_path, document_path, manifest_path=None) -> ExportManifest:
    import keras

    model = keras.models.load_model(model_path, compile=False)
    document, manifest = export_model(model, source=str(model_path))
    with open(document_path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=1)
        fh.write("\n")
    if manifest_path is not None:
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest.as_dict(), fh, indent=1)
            fh.write("\n")
    return manifest
