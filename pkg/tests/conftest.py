from __future__ import annotations

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--quick", action="store_true", help="shrink the statistical acceptance suites")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n=None):
    x = rng.normal(size=(3,) if n is None else (n, 3))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
