import numpy as np
import pytest


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of a scalar function of numpy arrays."""
    grads = []
    for target in range(len(arrays)):
        g = np.zeros_like(arrays[target])
        flat = g.reshape(-1)
        base = [a.copy() for a in arrays]
        for i in range(flat.size):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[target].reshape(-1)[i] += h
            minus[target].reshape(-1)[i] -= h
            flat[i] = (fn(*plus) - fn(*minus)) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return np.max(np.abs(a - b)) / (np.max(np.abs(b)) + 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
