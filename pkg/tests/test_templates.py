"""Model templates: the residual network's parameter pin and the small builders."""

import numpy as np
import pytest

from nnc.ir import Shape, infer_shapes, parameter_count, validate
from nnc.templates import build_cnn, build_mlp, build_resnet_v1_6


def resnet_param_polynomial(f: int, in_channels: int, classes: int) -> int:
    """Closed-form parameter count: stem conv on in_channels, four f->f k=3
    convs, one 1x1 shortcut conv, dense classifier on f features."""
    stem = f * in_channels * 3 + f
    body = 4 * (f * f * 3 + f)
    shortcut = f * f + f
    dense = classes * f + classes
    return stem + body + shortcut + dense


class TestResNet:
    def test_parameter_pin_f16(self):
        g = build_resnet_v1_6(16, Shape(9, 128), 6)
        assert parameter_count(g) == 3958

    def test_16bit_weight_storage(self):
        g = build_resnet_v1_6(16, Shape(9, 128), 6)
        assert parameter_count(g) * 2 == 7916

    def test_parameter_count_matches_polynomial(self):
        for f in (1, 2, 8, 16, 24, 48):
            g = build_resnet_v1_6(f, Shape(9, 128), 6)
            assert parameter_count(g) == resnet_param_polynomial(f, 9, 6)

    def test_minimal_instance_validates(self):
        g = build_resnet_v1_6(1, Shape(9, 128), 2)
        assert validate(g) == []
        infer_shapes(g)

    def test_shapes_collapse_to_classifier(self):
        g = build_resnet_v1_6(16, Shape(9, 128), 6)
        shapes = infer_shapes(g)
        assert shapes[g.output] == Shape(1, 6)
        assert shapes["pool"] == Shape(16, 1)
        assert shapes["add1"] == Shape(16, 64)

    def test_deterministic_weights(self):
        a = build_resnet_v1_6(4, Shape(3, 16), 3)
        b = build_resnet_v1_6(4, Shape(3, 16), 3)
        for node_id in a.nodes:
            for key, arr in a.nodes[node_id].weights.items():
                assert np.array_equal(arr, b.nodes[node_id].weights[key])

    def test_batch_norm_variant_validates(self):
        g = build_resnet_v1_6(4, Shape(3, 32), 3, batch_norm=True)
        assert validate(g) == []
        assert any(n.kind == "BatchNorm" for n in g.nodes.values())

    def test_preconditions(self):
        with pytest.raises(ValueError):
            build_resnet_v1_6(0, Shape(9, 128), 6)
        with pytest.raises(ValueError):
            build_resnet_v1_6(4, Shape(9, 128), 1)


class TestMlp:
    def test_two_layer_structure_and_count(self):
        g = build_mlp(2, 4, Shape(1, 8), 2)
        assert validate(g) == []
        kinds = [g.nodes[n].kind for n in sorted(g.nodes)]
        assert kinds.count("Dense") == 2
        assert kinds.count("ReLU") == 1
        # weights+biases by hand: 8*4+4 + 4*2+2
        assert parameter_count(g) == 8 * 4 + 4 + 4 * 2 + 2 == 46

    def test_zero_layers_rejected(self):
        with pytest.raises(ValueError):
            build_mlp(0, 4, Shape(1, 8), 2)

    def test_single_layer_is_classifier_only(self):
        g = build_mlp(1, 4, Shape(1, 8), 3)
        assert parameter_count(g) == 8 * 3 + 3
        assert infer_shapes(g)[g.output] == Shape(1, 3)


class TestCnn:
    def test_valid_conv_then_pool_shapes(self):
        g = build_cnn(1, 2, 3, 2, Shape(1, 8), 2)
        shapes = infer_shapes(g)
        assert shapes["conv1"] == Shape(2, 6)
        assert shapes["pool1"] == Shape(2, 3)
        assert validate(g) == []

    def test_hidden_dense_layer(self):
        g = build_cnn(1, 2, 3, 2, Shape(1, 16), 4, fc_neurons=5)
        shapes = infer_shapes(g)
        assert shapes["fc1"] == Shape(1, 5)
        assert shapes[g.output] == Shape(1, 4)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            build_cnn(0, 2, 3, 2, Shape(1, 8), 2)
