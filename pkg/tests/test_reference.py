"""Self-checks for the oracles and the toy model family."""

import numpy as np

from nestq.calibration import float_forward
from nestq.layers import BitPolicy
from nestq.models import cnn_dataset, make_blob_dataset
from nestq.quantize import make_master_params
from nestq.reference import (
    enumerate_macs,
    exact_nested_shift,
    exact_requantize,
    fake_quant_forward,
    fake_quantize,
)


class TestDataset:
    def test_deterministic(self):
        a = make_blob_dataset(13, samples=50)
        b = make_blob_dataset(13, samples=50)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_non_negative_and_separated(self):
        x, _, means = make_blob_dataset(1, samples=200)
        assert x.min() >= 0.0
        d = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 4.0 * 0.5

    def test_float_linear_model_accuracy_floor(self):
        # nearest-mean in float exceeds 95% on well-separated blobs
        x, labels, means = make_blob_dataset(2, samples=1000)
        scores = x @ means.T - 0.5 * (means ** 2).sum(axis=1)
        acc = np.mean(np.argmax(scores, axis=1) == labels)
        assert acc > 0.95

    def test_empty_dataset(self):
        x, labels, means = make_blob_dataset(0, samples=0)
        assert x.shape == (0, 16) and labels.shape == (0,)

    def test_image_variant(self):
        x, labels = cnn_dataset(4, samples=10)
        assert x.shape == (10, 1, 8, 8)


class TestFakeQuant:
    def test_idempotent(self):
        p = make_master_params(-1.0, 1.0, 8)
        x = np.linspace(-1, 1, 33)
        once = fake_quantize(x, p)
        assert np.array_equal(fake_quantize(once, p), once)

    def test_error_within_half_step(self):
        p = make_master_params(-1.0, 1.0, 8)
        x = np.linspace(-1, 1, 1001)
        assert np.max(np.abs(fake_quantize(x, p) - x)) <= p.scale / 2 + 1e-12

    def test_forward_close_to_float_at_full_width(self, mlp, blob_data):
        x = blob_data[0][:50]
        y_float = float_forward(mlp, x)[-1]
        y_fake = fake_quant_forward(mlp, x, BitPolicy.uniform(8, 3))
        step = mlp.layers[-1].output_params.scale
        assert np.max(np.abs(y_fake - y_float)) <= 6 * step

    def test_toy_mlp_classifies_via_oracle(self, mlp, blob_data):
        x, labels, _ = blob_data
        y = fake_quant_forward(mlp, x[:200], BitPolicy.uniform(8, 3))
        assert np.mean(np.argmax(y, axis=1) == labels[:200]) > 0.95


class TestExactOracles:
    def test_requantize_identity(self):
        p = make_master_params(0.0, 2.0, 8)
        assert all(exact_requantize(q, p, p) == q for q in range(256))

    def test_nested_shift_known_values(self):
        assert exact_nested_shift(100, 8, 4) == 6
        assert exact_nested_shift(255, 8, 2) == 3


class TestMacEnumerator:
    def test_mlp_counts(self, mlp):
        assert enumerate_macs(mlp) == [16 * 32, 32 * 16, 16 * 4]

    def test_cnn_counts(self, cnn):
        # conv1: 8*8 outputs x 4 ch x 9 taps; conv2: 4*4 x 8 x 36; fc: 128*4
        assert enumerate_macs(cnn) == [64 * 4 * 9, 16 * 8 * 36, 128 * 4]
