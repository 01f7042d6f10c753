import numpy as np
import pytest

from softerr.fixtures import gaussian_dataset, linear_fixture, load_fixture, load_mnist5k


@pytest.fixture(scope="session")
def lenet():
    return load_fixture("lenet5")


@pytest.fixture(scope="session")
def mnist():
    return load_mnist5k("test")


@pytest.fixture(scope="session")
def mnist_small(mnist):
    return mnist.subset(slice(0, 200))


@pytest.fixture(scope="session")
def linear_net():
    return linear_fixture(0)


@pytest.fixture(scope="session")
def gauss_ds(linear_net):
    return gaussian_dataset(linear_net.input_shape, 200, linear_net.class_count)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
