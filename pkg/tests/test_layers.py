"""Layer execution: integer dataflow, traces, batch-norm folding, clamps."""

import numpy as np
import pytest

from nestq.calibration import calibrate, float_forward
from nestq.layers import (
    BatchNormParams,
    BitPolicy,
    LayerSpec,
    ModelGraph,
    ShapeMismatchError,
    fold_batchnorm,
    forward,
    pact_clamp,
    run_layer,
)
from nestq.quantize import NestedTensor, QuantParams, dequantize


def unit_params(n=8):
    return QuantParams(scale=1.0, offset=0.0, bitwidth=n, master_bitwidth=n)


def identity_fc(out_grid=None):
    p = unit_params()
    layer = LayerSpec(kind="fc", name="id", in_features=1, out_features=1,
                      weight=np.array([[1.0]]))
    layer.input_params = p
    layer.weight_params = p
    layer.weight_q = NestedTensor(data=np.array([[1]]), params=p)
    layer.output_params = out_grid or p
    layer.input_shape = (1,)
    layer.output_shape = (1,)
    return layer


class TestRunLayer:
    def test_identity_fc_full_width(self):
        layer = identity_fc()
        x = NestedTensor(data=np.array([123]), params=unit_params())
        out, record = run_layer(layer, x, 8)
        assert out.data[0] == 123
        assert record.shifted_elements == 0

    def test_two_input_sum_exact(self):
        p = unit_params()
        layer = LayerSpec(kind="fc", name="sum", in_features=2, out_features=1,
                          weight=np.array([[1.0, 1.0]]))
        layer.input_params = p
        layer.weight_params = p
        layer.weight_q = NestedTensor(data=np.array([[1, 1]]), params=p)
        layer.output_params = p
        layer.input_shape = (2,)
        layer.output_shape = (1,)
        x = NestedTensor(data=np.array([1, 2]), params=p)
        out, _ = run_layer(layer, x, 8)
        assert dequantize(out.data, p)[0] == 3.0

    def test_low_bitwidth_shifts_weights_and_input(self):
        layer = identity_fc()
        x = NestedTensor(data=np.array([123]), params=unit_params())
        _, record = run_layer(layer, x, 4)
        assert record.shifted_elements == 2  # one weight + one input element
        assert record.counters.shifts == 2

    def test_rejects_policy_above_master(self):
        layer = identity_fc()
        x = NestedTensor(data=np.array([1]), params=unit_params())
        with pytest.raises(ValueError):
            run_layer(layer, x, 9)

    def test_rejects_shape_mismatch(self):
        layer = identity_fc()
        x = NestedTensor(data=np.array([1, 2]), params=unit_params())
        with pytest.raises(ShapeMismatchError):
            run_layer(layer, x, 8)

    def test_uncalibrated_layer_rejected(self):
        layer = LayerSpec(kind="fc", in_features=1, out_features=1)
        layer.input_shape = (1,)
        x = NestedTensor(data=np.array([1]), params=unit_params())
        with pytest.raises(ValueError):
            run_layer(layer, x, 8)


class TestPactClamp:
    def grid(self):
        return unit_params()

    def test_identity_when_alpha_above_range(self):
        t = NestedTensor(data=np.array([0, 100, 255]), params=self.grid())
        out = pact_clamp(t, 300.0)
        assert np.array_equal(out.data, t.data)

    def test_clamps_above_alpha(self):
        t = NestedTensor(data=np.array([150]), params=self.grid())
        assert pact_clamp(t, 100.0).data[0] == 100

    def test_rejects_non_positive_alpha(self):
        t = NestedTensor(data=np.array([1]), params=self.grid())
        with pytest.raises(ValueError):
            pact_clamp(t, 0.0)


class TestFoldBatchnorm:
    def conv(self):
        rng = np.random.default_rng(1)
        return LayerSpec(kind="conv2d", name="c", in_channels=2, out_channels=3,
                         kernel=3, padding=1,
                         weight=rng.normal(size=(3, 2, 3, 3)),
                         bias=rng.normal(size=3))

    def test_identity_normalization(self):
        conv = self.conv()
        bn = BatchNormParams(gamma=np.ones(3), beta=np.zeros(3),
                             mean=np.zeros(3), var=np.ones(3), eps=0.0)
        folded = fold_batchnorm(conv, bn)
        assert np.allclose(folded.weight, conv.weight)
        assert np.allclose(folded.bias, conv.bias)

    def test_gamma_two_doubles(self):
        conv = self.conv()
        bn = BatchNormParams(gamma=np.full(3, 2.0), beta=np.zeros(3),
                             mean=np.zeros(3), var=np.ones(3), eps=0.0)
        folded = fold_batchnorm(conv, bn)
        assert np.allclose(folded.weight, 2 * conv.weight)
        assert np.allclose(folded.bias, 2 * conv.bias)

    def test_float_equivalence(self):
        rng = np.random.default_rng(2)
        conv = self.conv()
        bn = BatchNormParams(gamma=rng.uniform(0.5, 2.0, 3),
                             beta=rng.normal(size=3),
                             mean=rng.normal(size=3),
                             var=rng.uniform(0.5, 2.0, 3))
        folded = fold_batchnorm(conv, bn)
        x = rng.normal(size=(4, 2, 5, 5))
        from nestq.calibration import float_layer
        y_unfolded = float_layer(conv, x)
        factor = bn.gamma / np.sqrt(bn.var + bn.eps)
        y_bn = (y_unfolded - bn.mean.reshape(1, -1, 1, 1)) * \
            factor.reshape(1, -1, 1, 1) + bn.beta.reshape(1, -1, 1, 1)
        assert np.allclose(float_layer(folded, x), y_bn, atol=1e-6)

    def test_bad_variance_rejected(self):
        bn = BatchNormParams(gamma=np.ones(3), beta=np.zeros(3),
                             mean=np.zeros(3), var=np.full(3, -1.0), eps=0.0)
        with pytest.raises(ValueError):
            fold_batchnorm(self.conv(), bn)


class TestModelGraph:
    def test_shape_inference_and_policy_indices(self, cnn):
        assert cnn.layers[0].output_shape == (4, 8, 8)
        assert cnn.layers[2].output_shape == (8, 4, 4)
        assert cnn.policy_indices == [0, 2, 5]

    def test_fc_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ModelGraph(layers=[LayerSpec(kind="fc", in_features=5, out_features=2)],
                       input_shape=(4,))

    def test_residual_edge_must_point_backwards(self):
        with pytest.raises(ValueError):
            ModelGraph(layers=[LayerSpec(kind="residual_add", source=0)],
                       input_shape=(4,))

    def test_residual_shape_checked(self):
        layers = [
            LayerSpec(kind="fc", in_features=4, out_features=3),
            LayerSpec(kind="residual_add", source=0),
        ]
        g = ModelGraph(layers=layers, input_shape=(4,))
        assert g.layers[1].output_shape == (3,)
        bad = [
            LayerSpec(kind="fc", in_features=4, out_features=3),
            LayerSpec(kind="fc", in_features=3, out_features=2),
            LayerSpec(kind="residual_add", source=0),
        ]
        with pytest.raises(ShapeMismatchError):
            ModelGraph(layers=bad, input_shape=(4,))


class TestBitPolicy:
    def test_bits_must_be_in_candidates(self):
        with pytest.raises(ValueError):
            BitPolicy(bits=(3,), candidates=(4, 8))

    def test_uniform(self):
        p = BitPolicy.uniform(8, 3)
        assert p.bits == (8, 8, 8) and len(p) == 3


class TestForward:
    def test_all_master_policy_no_shifts(self, mlp, blob_data):
        x = blob_data[0]
        _, trace = forward(mlp, x[0], BitPolicy.uniform(8, 3))
        assert trace.shifted_elements == 0
        assert trace.counters.shifts == 0
        assert trace.bitwidths() == [8, 8, 8, 8, 8]

    def test_no_float_tensor_ops_between_quant_and_dequant(self, mlp, cnn,
                                                           blob_data, cnn_data):
        _, t1 = forward(mlp, blob_data[0][0], BitPolicy(bits=(8, 4, 8),
                                                        candidates=(4, 8)))
        _, t2 = forward(cnn, cnn_data[0][0], BitPolicy.uniform(6, 3, (6,)))
        assert t1.fp_tensor_ops == 0 and t1.counters.fp_ops == 0
        assert t2.fp_tensor_ops == 0 and t2.counters.fp_ops == 0

    def test_shifted_elements_counting_contract(self, mlp, blob_data):
        policy = BitPolicy(bits=(8, 4, 6), candidates=(4, 6, 8))
        _, trace = forward(mlp, blob_data[0][0], policy)
        expected = 0
        for b, idx in zip(policy.bits, mlp.policy_indices):
            if b < mlp.master_bitwidth:
                layer = mlp.layers[idx]
                expected += layer.weight_elements() + layer.input_elements()
        assert trace.shifted_elements == expected
        assert trace.transition_ops == expected
        assert trace.counters.shifts == expected

    def test_policy_length_checked(self, mlp, blob_data):
        with pytest.raises(ValueError):
            forward(mlp, blob_data[0][0], BitPolicy.uniform(8, 2))

    def test_deterministic(self, mlp, blob_data):
        x = blob_data[0][1]
        y1, _ = forward(mlp, x, BitPolicy.uniform(8, 3))
        y2, _ = forward(mlp, x, BitPolicy.uniform(8, 3))
        assert np.array_equal(y1, y2)

    def test_full_width_output_close_to_float(self, mlp, blob_data):
        x = blob_data[0][:20]
        y_float = float_forward(mlp, x)[-1]
        for i in range(20):
            y, _ = forward(mlp, x[i], BitPolicy.uniform(8, 3))
            # a handful of master steps of slack across three layers
            tol = 6 * mlp.layers[-1].output_params.scale
            assert np.max(np.abs(y - y_float[i])) <= tol

    def test_residual_add_path(self):
        rng = np.random.default_rng(9)
        layers = [
            LayerSpec(kind="fc", name="a", in_features=4, out_features=4,
                      weight=np.eye(4) + rng.normal(0, 0.05, (4, 4)),
                      bias=np.zeros(4)),
            LayerSpec(kind="residual_add", name="skip", source=0),
        ]
        model = ModelGraph(layers=layers, input_shape=(4,))
        data = rng.uniform(0, 4, size=(64, 4))
        calibrate(model, [data])
        x = data[0]
        y, trace = forward(model, x, BitPolicy(bits=(8, 8), candidates=(8,)))
        want = float_forward(model, x[None])[-1][0]
        assert np.max(np.abs(y - want)) <= 4 * model.layers[1].output_params.scale
        _, trace4 = forward(model, x, BitPolicy(bits=(4, 4), candidates=(4,)))
        # residual add shifts both operands: 2 * 4 elements, plus the fc's 16+4
        assert trace4.records[1].shifted_elements == 8
        assert trace4.shifted_elements == 16 + 4 + 8


class TestAvgPoolFlatten:
    def test_avgpool_integer_mean(self):
        p = unit_params()
        layer = LayerSpec(kind="avgpool", pool=2)
        layer.input_shape = (1, 2, 2)
        layer.output_shape = (1, 1, 1)
        layer.output_params = p
        x = NestedTensor(data=np.array([[[1, 2], [3, 4]]]), params=p)
        out, _ = run_layer(layer, x, 8)
        assert out.data[0, 0, 0] == 3  # round(10/4) half away

    def test_flatten_preserves_grid(self):
        p = unit_params()
        layer = LayerSpec(kind="flatten")
        layer.input_shape = (1, 2, 2)
        layer.output_shape = (4,)
        layer.output_params = p
        x = NestedTensor(data=np.arange(4).reshape(1, 2, 2), params=p)
        out, _ = run_layer(layer, x, 8)
        assert out.data.shape == (4,)
        assert out.params == p
