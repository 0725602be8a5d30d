"""Quantized-model archive: round-trip fidelity across widths."""

import json

import numpy as np
import pytest

from conftest import make_builder
from nnc import interpreter
from nnc.archive import load_quantized_model, save_quantized_model
from nnc.quantizer import QuantizationScheme, calibrate, quantize_input, quantize_model
from nnc.transforms import run_pipeline


@pytest.mark.parametrize("width", [8, 9, 16])
def test_round_trip_executes_bit_identically(tmp_path, width):
    b = make_builder(width)
    g = run_pipeline(b.random_model(residual=True))
    samples = [b.random_input(g) for _ in range(3)]
    qm = quantize_model(g, QuantizationScheme.per_layer(width), calibrate(g, samples))
    out_dir = tmp_path / f"w{width}"
    save_quantized_model(qm, out_dir)
    loaded = load_quantized_model(out_dir)

    assert loaded.width == qm.width
    assert loaded.quant == qm.quant
    for node_id, tensor in qm.weights.items():
        assert tensor.data.dtype == loaded.weights[node_id].data.dtype
        assert np.array_equal(tensor.data, loaded.weights[node_id].data)
    for node_id, bias in qm.biases.items():
        assert bias.dtype == loaded.biases[node_id].dtype
        assert np.array_equal(bias, loaded.biases[node_id])

    for x in samples:
        ft = quantize_input(qm, x)
        a = interpreter.run_fixed(qm, ft)
        b_out = interpreter.run_fixed(loaded, quantize_input(loaded, x))
        assert np.array_equal(a.data, b_out.data)


def test_9bit_archive_uses_16bit_containers(tmp_path):
    b = make_builder(77)
    g = run_pipeline(b.random_model())
    qm = quantize_model(g, QuantizationScheme.per_network(9, 5))
    save_quantized_model(qm, tmp_path)
    loaded = load_quantized_model(tmp_path)
    for tensor in loaded.weights.values():
        assert tensor.data.dtype == np.int16
        assert tensor.data.max() <= 255 and tensor.data.min() >= -256
    for bias in loaded.biases.values():
        assert bias.dtype == np.int32


def test_archive_is_deterministic(tmp_path):
    b = make_builder(5)
    g = run_pipeline(b.random_model())
    qm = quantize_model(g, QuantizationScheme.per_network(16, 9))
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    save_quantized_model(qm, dir_a)
    save_quantized_model(qm, dir_b)
    for name in ("model.json", "quant_info.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
    blobs = json.loads((dir_a / "quant_info.json").read_text())["blobs"]
    for blob in blobs:
        assert (dir_a / "weights" / blob).read_bytes() == (dir_b / "weights" / blob).read_bytes()
