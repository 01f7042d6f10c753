"""Rebuild the bundled data and fixture networks from scratch.

The MNIST subset comes from mlxtend's ``mnist_5k.csv.gz`` (5000 rows of
784 pixels plus a label). Point this script at a copy of that file to
regenerate the IDX files, then both fixture networks are retrained with
their default settings. With the same inputs the outputs are
bit-identical to the files shipped in ``softerr/data``.

    python demos/build_fixtures.py [path/to/mnist_5k.csv.gz]
"""
import logging
import sys

from softerr.fixtures import ARCHITECTURES, build_mnist5k_idx, load_mnist5k, model_path, train_reference
from softerr.model_io import clean_accuracy

logging.basicConfig(level=logging.INFO, format="%(message)s")

if len(sys.argv) > 1:
    build_mnist5k_idx(sys.argv[1])
    load_mnist5k.cache_clear()
    print("wrote IDX files")

test = load_mnist5k("test")
for name in ARCHITECTURES:
    net = train_reference(name)  # epochs=10, lr=0.1, batch 32, seed 0
    print(f"{name}: saved {model_path(name)}, int8 test accuracy {clean_accuracy(net, test):.3f}")
