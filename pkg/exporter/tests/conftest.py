"""Exporter test helpers: Keras model zoo and round-trip verification.

The primary toolchain is exercised strictly through its external
interfaces: the JSON model document and the `nnc` command line.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

keras = pytest.importorskip("keras")

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")


def nnc_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "nnc.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def keras_input_to_document_tensor(x: np.ndarray) -> list:
    """Keras sample (steps, channels) or (features,) -> document [channels][samples]."""
    if x.ndim == 2:
        return x.T.tolist()
    return x.reshape(1, -1).tolist()


def _softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def roundtrip_max_diff(tmp_path, model, document: dict, n_inputs: int = 20) -> float:
    """Run the exported document through the nnc float path and return the
    max absolute difference against the Keras predictions.

    The deployment toolchain never executes SoftMax (it strips a terminal
    one; argmax is unchanged), so when the source model ends in a softmax
    the exported pipeline yields the logits and the real softmax is applied
    here before comparing.
    """
    rng = np.random.default_rng(99)
    in_shape = tuple(int(d) for d in model.inputs[0].shape[1:])
    samples = [rng.uniform(-1.5, 1.5, in_shape).astype(np.float32) for _ in range(n_inputs)]

    predictions = np.asarray(model(np.stack(samples)))
    assert predictions.ndim == 2, "verification models must end on a flat output"

    (tmp_path / "model.json").write_text(json.dumps(document))
    (tmp_path / "dataset.json").write_text(
        json.dumps({"inputs": [keras_input_to_document_tensor(x) for x in samples]})
    )
    (tmp_path / "exp.toml").write_text(
        "\n".join(
            [
                "[model]",
                'path = "model.json"',
                "[evaluation]",
                'dataset = "dataset.json"',
            ]
        )
    )
    dump = tmp_path / "outputs.json"
    proc = nnc_cli("evaluate", str(tmp_path / "exp.toml"), "--dump-outputs", str(dump))
    assert proc.returncode == 0, proc.stderr + proc.stdout
    ours = np.asarray(json.loads(dump.read_text())["float"], dtype=np.float64)

    output_node = next(n for n in document["nodes"] if n["id"] == document["output"])
    if output_node["kind"] == "SoftMax":
        ours = _softmax(ours)
    return float(np.max(np.abs(ours - predictions.astype(np.float64))))


def assert_document_validates(tmp_path, document: dict):
    path = tmp_path / "exported.json"
    path.write_text(json.dumps(document))
    proc = nnc_cli("inspect", str(path))
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "validation problems" not in proc.stdout
