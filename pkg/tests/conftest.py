import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_stack_arrays(rng, max_blocks=9, max_side=32, max_channels=64):
    """Random activation block list with bounded dimensions."""
    n_blocks = int(rng.integers(1, max_blocks + 1))
    blocks = []
    for _ in range(n_blocks):
        h = int(rng.integers(1, max_side + 1))
        w = int(rng.integers(1, max_side + 1))
        c = int(rng.integers(1, max_channels + 1))
        blocks.append(rng.standard_normal((h, w, c)).astype(np.float32))
    return blocks


def random_unit_rows(rng, n, dim):
    """Rows drawn from a Gaussian and normalized to unit length."""
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)
