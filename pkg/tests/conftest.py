import os

import numpy as np
import pytest

from dropprune.data import Dataset, data_dir, find_mnist, synth_blobs


def mnist_dir():
    return data_dir(os.environ.get("DPRUNE_DATA_DIR"))


def mnist_available():
    d = mnist_dir()
    return find_mnist(d, "train") is not None and find_mnist(d, "test") is not None


def split_blobs(seed=3, classes=3, per_class=300, dim=8, spread=0.15):
    """Well-separated blobs split 80/20 into train/test."""
    full = synth_blobs(seed, classes, per_class, dim, spread)
    cut = int(0.8 * full.size)
    train = Dataset(full.inputs[:cut], full.labels[:cut], "train")
    test = Dataset(full.inputs[cut:], full.labels[cut:], "test")
    return train, test


@pytest.fixture(scope="session")
def blob_data():
    return split_blobs()


@pytest.fixture(scope="session")
def trained_blob_net(blob_data):
    from dropprune.engine import train_baseline
    from dropprune.nn import Network, TrainConfig

    train, test = blob_data
    net = Network.mlp([train.dim, 16, int(train.labels.max()) + 1], seed=0)
    train_baseline(net, train, test, TrainConfig(lr=0.1, batch_size=32, epochs=6, seed=0))
    return net
