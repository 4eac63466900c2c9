import os
from pathlib import Path

import numpy as np
import pytest

from bmnet.data import DataBundle, Dataset


def mnist_dir() -> Path | None:
    """Locate the canonical MNIST IDX files, env override first."""
    candidates = [os.environ.get("BMNET_MNIST_DIR")]
    candidates += ["data/mnist", str(Path.home() / "data" / "mnist"), "/root/data/mnist"]
    for c in candidates:
        if c and (Path(c) / "train-images-idx3-ubyte").exists():
            return Path(c)
        if c and (Path(c) / "train-images-idx3-ubyte.gz").exists():
            return Path(c)
    return None


requires_mnist = pytest.mark.skipif(
    mnist_dir() is None,
    reason="canonical MNIST IDX files not found (set BMNET_MNIST_DIR)",
)


def synthetic_digits(n: int, seed: int, size: int = 28) -> Dataset:
    """Linearly separable 10-class image set: one bright bar per class."""
    r = np.random.default_rng(seed)
    y = r.integers(0, 10, n)
    x = r.random((n, size, size, 1)) * 0.15
    for i, k in enumerate(y):
        x[i, 2 + 2 * k : 6 + 2 * k, size // 3 : 2 * size // 3, 0] += 0.8
    return Dataset(np.clip(x, 0.0, 1.0), y, "synthetic")


def synthetic_bundle(n_train=600, n_val=120, n_test=200, seed=0, size=28) -> DataBundle:
    return DataBundle(
        synthetic_digits(n_train, seed * 31 + 1, size),
        synthetic_digits(n_val, seed * 31 + 2, size),
        synthetic_digits(n_test, seed * 31 + 3, size),
    )
