"""Bundled MNIST-format data and the reference network fixtures.

The dataset is the 5000-image MNIST subset (500 per digit) distributed
with mlxtend, shuffled with a fixed seed and split 4000/1000 into
train/test IDX files under ``softerr/data``.
"""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from .model_io import DatasetHandle, load_idx_dataset, load_network, write_idx
from .network import Conv2D, Flatten, FullyConnected, MaxPool, ReLU, init_random_network

DATA_DIR = Path(__file__).resolve().parent / "data"


def lenet5_layers():
    """LeNet-5 style: 2 conv + 3 FC (5 weighted layers)."""
    return [
        Conv2D(1, 6, 5), ReLU(), MaxPool(2),
        Conv2D(6, 16, 5), ReLU(), MaxPool(2),
        Flatten(),
        FullyConnected(256, 120), ReLU(),
        FullyConnected(120, 84), ReLU(),
        FullyConnected(84, 10),
    ]


def deep8_layers():
    """4 conv + 4 FC (8 weighted layers)."""
    return [
        Conv2D(1, 8, 3), ReLU(),
        Conv2D(8, 8, 3), ReLU(), MaxPool(2),
        Conv2D(8, 16, 3), ReLU(),
        Conv2D(16, 16, 3), ReLU(), MaxPool(2),
        Flatten(),
        FullyConnected(256, 64), ReLU(),
        FullyConnected(64, 32), ReLU(),
        FullyConnected(32, 32), ReLU(),
        FullyConnected(32, 10),
    ]


def linear_stack_layers(channels: int = 16, depth: int = 4, kernel: int = 3):
    """Activation-free same-padded conv stack ending in an FC head."""
    layers = [Conv2D(1, channels, kernel, padding=kernel // 2)]
    layers += [Conv2D(channels, channels, kernel, padding=kernel // 2) for _ in range(depth - 1)]
    layers += [Flatten()]
    return layers


ARCHITECTURES = {"lenet5": lenet5_layers, "deep8": deep8_layers}


def build_mnist5k_idx(csv_path, out_dir=DATA_DIR, seed: int = 0, n_test: int = 1000):
    """Convert mlxtend's ``mnist_5k.csv.gz`` (784 pixels + label per row)."""
    table = np.loadtxt(csv_path, delimiter=",", dtype=np.int64)
    x, y = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1].astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(y))
    x, y = x[order], y[order]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = len(y) - n_test
    write_idx(out / "mnist5k-train-images-idx3-ubyte.gz", x[:n_train])
    write_idx(out / "mnist5k-train-labels-idx1-ubyte.gz", y[:n_train])
    write_idx(out / "mnist5k-test-images-idx3-ubyte.gz", x[n_train:])
    write_idx(out / "mnist5k-test-labels-idx1-ubyte.gz", y[n_train:])


def dataset_paths(split: str = "test"):
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    return (DATA_DIR / f"mnist5k-{split}-images-idx3-ubyte.gz",
            DATA_DIR / f"mnist5k-{split}-labels-idx1-ubyte.gz")


@lru_cache(maxsize=None)
def load_mnist5k(split: str = "test") -> DatasetHandle:
    return load_idx_dataset(*dataset_paths(split))


def model_path(name: str) -> Path:
    return DATA_DIR / f"{name}.sfm"


@lru_cache(maxsize=None)
def load_fixture(name: str = "lenet5"):
    """Trained, calibrated int8 fixture network."""
    return load_network(model_path(name))


def linear_fixture(seed: int = 0, channels: int = 16, depth: int = 4, size: int = 16, bits: int = 8):
    """Random activation-free conv stack with calibrated quantization.

    Its 'class count' is just the flattened output length; it is used for
    propagation studies, not classification.
    """
    from .network import calibrate

    layers = linear_stack_layers(channels, depth)
    net = init_random_network(layers, (1, size, size), seed=seed)
    probe = np.random.default_rng([seed, 1]).normal(size=(64, 1, size, size))
    sites = [i for i, l in enumerate(layers) if l.parametric]
    return calibrate(net, probe, bits=bits, sites=sites)


def train_reference(name: str, save: bool = True, **kw):
    """Retrain a bundled fixture from scratch (deterministic in ``seed``)."""
    from .model_io import save_network
    from .training import train_fixture

    net = train_fixture(load_mnist5k("train"), ARCHITECTURES[name](), **kw)
    if save:
        save_network(net, model_path(name))
    return net


def gaussian_dataset(shape=(1, 16, 16), n: int = 200, class_count: int = 1, seed: int = 5) -> DatasetHandle:
    """Unit-normal unlabeled inputs (all labels 0) for networks that are
    not classifiers, such as :func:`linear_fixture`."""
    images = np.random.default_rng([seed, 0x6761]).normal(size=(n,) + tuple(shape))
    return DatasetHandle(images, np.zeros(n, dtype=np.int64), class_count)
