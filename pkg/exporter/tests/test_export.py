"""Keras -> document conversion and round-trip prediction agreement."""

import numpy as np
import pytest

keras = pytest.importorskip("keras")
from keras import layers  # noqa: E402

from conftest import assert_document_validates, roundtrip_max_diff  # noqa: E402
from nnc_exporter import UnsupportedLayer, export_model  # noqa: E402

TOLERANCE = 1e-5


def seeded(model):
    rng = np.random.default_rng(4242)
    weights = model.get_weights()
    model.set_weights([rng.uniform(-0.5, 0.5, w.shape).astype(np.float32) for w in weights])
    return model


def mlp_model():
    return seeded(
        keras.Sequential(
            [
                keras.Input(shape=(8,)),
                layers.Dense(6, activation="relu"),
                layers.Dense(3),
            ]
        )
    )


def cnn_model():
    return seeded(
        keras.Sequential(
            [
                keras.Input(shape=(16, 3)),
                layers.ZeroPadding1D(1),
                layers.Conv1D(4, 3, activation="relu"),
                layers.MaxPooling1D(2),
                layers.Flatten(),
                layers.Dense(5, activation="softmax"),
            ]
        )
    )


def residual_model():
    inp = keras.Input(shape=(16, 3))
    x = layers.Conv1D(4, 3, padding="same", activation="relu", name="stem")(inp)
    y = layers.Conv1D(4, 3, padding="same", name="branch")(x)
    z = layers.Add(name="join")([x, y])
    z = layers.ReLU(name="act")(z)
    z = layers.GlobalAveragePooling1D(name="gap")(z)
    out = layers.Dense(4, activation="softmax", name="cls")(z)
    return seeded(keras.Model(inp, out))


def batchnorm_model():
    model = keras.Sequential(
        [
            keras.Input(shape=(12, 2)),
            layers.Conv1D(3, 3),
            layers.BatchNormalization(),
            layers.Activation("relu"),
            layers.AveragePooling1D(2),
            layers.Flatten(),
            layers.Dense(2),
        ]
    )
    model = seeded(model)
    bn = model.layers[1]
    # moving statistics are what inference uses; make them non-trivial
    rng = np.random.default_rng(7)
    bn.moving_mean.assign(rng.uniform(-0.5, 0.5, 3).astype(np.float32))
    bn.moving_variance.assign(rng.uniform(0.5, 2.0, 3).astype(np.float32))
    return model


class TestDocuments:
    def test_unit_dense_exports_exact_kernel(self, tmp_path):
        model = keras.Sequential([keras.Input(shape=(1,)), layers.Dense(1)])
        model.set_weights([np.array([[1.0]], dtype=np.float32),
                           np.array([0.0], dtype=np.float32)])
        document, manifest = export_model(model)
        (dense,) = document["nodes"]
        assert dense["kind"] == "Dense"
        assert dense["weights"]["kernel"] == [[1.0]]
        assert dense["weights"]["bias"] == [0.0]
        assert document["output"] == dense["id"]
        assert_document_validates(tmp_path, document)

    def test_residual_model_structure(self, tmp_path):
        document, manifest = export_model(residual_model())
        kinds = {n["id"]: n["kind"] for n in document["nodes"]}
        adds = [n for n in document["nodes"] if n["kind"] == "Add"]
        assert len(adds) == 1 and len(adds[0]["inputs"]) == 2
        assert "SoftMax" in kinds.values()
        assert manifest.layer_map["gap"]  # GAP lowers to AvgPool + Flatten
        assert len(manifest.layer_map["gap"]) == 2
        assert_document_validates(tmp_path, document)

    def test_weights_match_source_exactly(self):
        model = cnn_model()
        document, _ = export_model(model)
        conv = next(n for n in document["nodes"] if n["kind"] == "Conv1D")
        keras_kernel = model.layers[1].kernel.numpy()  # (k, c, f)
        exported = np.asarray(conv["weights"]["kernel"])  # (f, c, k)
        assert np.array_equal(exported, keras_kernel.transpose(2, 1, 0).astype(np.float64))

    def test_conv2d_rejected_with_layer_name(self):
        model = keras.Sequential(
            [
                keras.Input(shape=(8, 8, 1)),
                layers.Conv2D(2, 3, name="the_offender"),
            ]
        )
        with pytest.raises(UnsupportedLayer) as err:
            export_model(model)
        assert "the_offender" in str(err.value) or "rank" in str(err.value)

    def test_dilated_conv_rejected(self):
        model = keras.Sequential(
            [keras.Input(shape=(16, 2)), layers.Conv1D(2, 3, dilation_rate=2, name="dil")]
        )
        with pytest.raises(UnsupportedLayer):
            export_model(model)

    def test_reordered_flat_output_rejected(self):
        model = keras.Sequential([keras.Input(shape=(6, 4)), layers.Flatten()])
        with pytest.raises(UnsupportedLayer):
            export_model(model)

    def test_dropout_skipped_with_warning(self, tmp_path):
        model = seeded(
            keras.Sequential(
                [
                    keras.Input(shape=(8,)),
                    layers.Dense(4, activation="relu"),
                    layers.Dropout(0.5),
                    layers.Dense(2),
                ]
            )
        )
        document, manifest = export_model(model)
        assert any("Dropout" in w for w in manifest.warnings)
        assert_document_validates(tmp_path, document)


class TestRoundTrip:
    @pytest.mark.parametrize(
        "factory", [mlp_model, cnn_model, residual_model, batchnorm_model]
    )
    def test_predictions_agree_within_tolerance(self, tmp_path, factory):
        model = factory()
        document, _ = export_model(model)
        assert_document_validates(tmp_path, document)
        diff = roundtrip_max_diff(tmp_path, model, document, n_inputs=20)
        assert diff <= TOLERANCE, f"{factory.__name__}: max diff {diff}"

    def test_keras_native_format_round_trips(self, tmp_path):
        from nnc_exporter import export_file

        model = mlp_model()
        path = tmp_path / "model.keras"
        model.save(path)
        document_path = tmp_path / "model.json"
        manifest = export_file(path, document_path, tmp_path / "manifest.json")
        assert document_path.exists()
        assert manifest.source == str(path)
        reloaded = keras.models.load_model(path, compile=False)
        import json as _json

        document = _json.loads(document_path.read_text())
        diff = roundtrip_max_diff(tmp_path, reloaded, document, n_inputs=20)
        assert diff <= TOLERANCE

    def test_cli_writes_document_and_manifest(self, tmp_path):
        import subprocess
        import sys

        model = cnn_model()
        h5 = tmp_path / "trained.h5"
        model.save(h5)
        out = tmp_path / "exported.json"
        manifest = tmp_path / "manifest.json"
        proc = subprocess.run(
            [sys.executable, "-m", "nnc_exporter.cli", str(h5),
             "-o", str(out), "--manifest", str(manifest)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists() and manifest.exists()
        import json as _json

        recorded = _json.loads(manifest.read_text())
        assert set(recorded) == {"source", "layer_map", "warnings"}

    def test_cli_reports_unsupported_layer(self, tmp_path):
        import subprocess
        import sys

        model = keras.Sequential(
            [keras.Input(shape=(16, 2)), layers.Conv1D(2, 3, dilation_rate=2, name="dil")]
        )
        h5 = tmp_path / "bad.h5"
        model.save(h5)
        proc = subprocess.run(
            [sys.executable, "-m", "nnc_exporter.cli", str(h5), "-o", str(tmp_path / "o.json")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert "dil" in proc.stderr

    def test_flatten_permutation_is_load_bearing(self, tmp_path):
        # Scrambling the exporter's dense reordering must break agreement;
        # guards against the permutation silently becoming a no-op.
        model = cnn_model()
        document, _ = export_model(model)
        dense = next(n for n in document["nodes"] if n["kind"] == "Dense")
        kernel = np.asarray(dense["weights"]["kernel"])
        scrambled = np.roll(kernel, 1, axis=1)
        dense["weights"]["kernel"] = scrambled.tolist()
        diff = roundtrip_max_diff(tmp_path, model, document, n_inputs=5)
        assert diff > TOLERANCE
