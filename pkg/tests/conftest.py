"""Shared fixtures: calibrated toy models and their datasets."""

import pytest

from nestq.calibration import calibrate
from nestq.models import build_toy_cnn, build_toy_mlp, cnn_dataset, make_blob_dataset

MLP_SEED = 7
DATA_SEED = 3


@pytest.fixture(scope="session")
def blob_data():
    x, labels, means = make_blob_dataset(DATA_SEED, samples=1000)
    return x, labels, means


@pytest.fixture(scope="session")
def mlp(blob_data):
    x, _, means = blob_data
    model = build_toy_mlp(seed=MLP_SEED, means=means)
    calibrate(model, [x[i:i + 100] for i in range(0, 400, 100)])
    return model


@pytest.fixture(scope="session")
def cnn_data():
    return cnn_dataset(5, samples=100)


@pytest.fixture(scope="session")
def cnn(cnn_data):
    x, _ = cnn_data
    model = build_toy_cnn(seed=11)
    calibrate(model, [x[i:i + 25] for i in range(0, 100, 25)])
    return model
