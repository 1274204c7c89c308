"""EMA range tracking, clamp-bound selection, grid freezing."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nestq.calibration import RangeState, calibrate, ema_update
from nestq.layers import LayerSpec, ModelGraph
from nestq.quantize import MAX_BITWIDTH, MIN_BITWIDTH


class TestEmaUpdate:
    def test_first_batch_initializes(self):
        s = ema_update(RangeState(momentum=0.9), -3.0, 5.0)
        assert s.y_min == -3.0 and s.y_max == 5.0 and s.steps == 1

    def test_zero_momentum_takes_batch_extrema(self):
        s = ema_update(RangeState(momentum=0.0), 0.0, 1.0)
        s = ema_update(s, -7.0, 7.0)
        assert s.y_min == -7.0 and s.y_max == 7.0

    def test_unit_momentum_freezes_state(self):
        s = ema_update(RangeState(momentum=1.0), 0.0, 1.0)
        s = ema_update(s, -100.0, 100.0)
        assert s.y_min == 0.0 and s.y_max == 1.0

    def test_blend_arithmetic(self):
        s = ema_update(RangeState(momentum=0.9), 0.0, 1.0)
        s = ema_update(s, 0.0, 2.0)
        assert s.y_max == pytest.approx(1.1)

    def test_rejects_inverted_batch(self):
        with pytest.raises(ValueError):
            ema_update(RangeState(), 2.0, 1.0)

    @given(st.floats(0, 1), st.floats(-50, 50), st.floats(-50, 50),
           st.floats(-50, 50), st.floats(-50, 50))
    def test_convex_combination(self, g, pmin, pmax, bmin, bmax):
        pmin, pmax = min(pmin, pmax), max(pmin, pmax)
        bmin, bmax = min(bmin, bmax), max(bmin, bmax)
        s = ema_update(RangeState(momentum=g), pmin, pmax)
        s2 = ema_update(s, bmin, bmax)
        assert min(pmax, bmax) - 1e-9 <= s2.y_max <= max(pmax, bmax) + 1e-9
        assert min(pmin, bmin) - 1e-9 <= s2.y_min <= max(pmin, bmin) + 1e-9

    def test_repeated_data_converges_toward_extrema(self):
        s = ema_update(RangeState(momentum=0.9), 0.0, 1.0)
        gaps = []
        for _ in range(20):
            s = ema_update(s, 0.0, 2.0)
            gaps.append(2.0 - s.y_max)
        assert all(a > b >= 0 for a, b in zip(gaps, gaps[1:]))


def single_fc_model():
    layer = LayerSpec(kind="fc", name="lin", in_features=1, out_features=1,
                      weight=np.array([[1.0]]))
    return ModelGraph(layers=[layer], input_shape=(1,))


class TestCalibrate:
    def test_known_output_range(self):
        model = single_fc_model()
        data = np.linspace(0.0, 10.0, 101).reshape(-1, 1)
        calibrate(model, [data], momentum=0.0)
        assert model.layers[0].output_params.scale == pytest.approx(10 / 255)

    def test_constant_weights_flagged_and_widened(self):
        layer = LayerSpec(kind="fc", name="c", in_features=2, out_features=2,
                          weight=np.full((2, 2), 0.5))
        model = ModelGraph(layers=[layer], input_shape=(2,))
        calibrate(model, [np.random.default_rng(0).uniform(0, 1, (32, 2))])
        assert model.layers[0].range_flagged
        assert model.layers[0].weight_params.scale > 0

    def test_two_passes_deterministic(self, blob_data):
        from nestq.models import build_toy_mlp
        x = blob_data[0][:200]
        batches = [x[i:i + 50] for i in range(0, 200, 50)]
        m1 = calibrate(build_toy_mlp(means=blob_data[2]), batches, passes=2)
        m2 = calibrate(build_toy_mlp(means=blob_data[2]), batches, passes=2)
        for a, b in zip(m1.layers, m2.layers):
            assert a.output_params == b.output_params

    def test_activation_grids_have_zero_offset(self, mlp):
        for layer in mlp.layers:
            if layer.kind == "relu_pact":
                assert layer.alpha > 0
                assert layer.output_params.offset == 0.0

    def test_all_grids_satisfy_core_invariants(self, mlp, cnn):
        for model in (mlp, cnn):
            assert model.is_calibrated
            for layer in model.layers:
                for p in (layer.input_params, layer.weight_params,
                          layer.bias_params, layer.prebias_params,
                          layer.output_params):
                    if p is not None:
                        assert p.scale > 0
                        assert MIN_BITWIDTH <= p.bitwidth <= p.master_bitwidth \
                            <= MAX_BITWIDTH

    def test_rejects_zero_passes(self):
        with pytest.raises(ValueError):
            calibrate(single_fc_model(), [np.ones((1, 1))], passes=0)

    def test_mac_layer_feeding_clamp_adopts_clamp_grid(self, mlp):
        fc1, act1 = mlp.layers[0], mlp.layers[1]
        assert fc1.output_params.offset == 0.0
        top = fc1.output_params.scale * fc1.output_params.qmax
        assert top == pytest.approx(act1.alpha)
