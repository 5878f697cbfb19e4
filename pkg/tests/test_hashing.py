"""The two splitmix64 implementations (numpy and kernel) must agree."""

import numpy as np

from cxrtrees import _kernels
from cxrtrees.hashing import (
    bootstrap_indices,
    mix_key,
    stream_state_after,
    tree_key,
    uniform_matrix,
    uniform_stream,
)


def test_kernel_stream_continues_numpy_stream():
    key = tree_key(123, 4, 5)
    n = 64
    head = uniform_stream(key, n)
    state = stream_state_after(key, n)
    tail = np.empty(32)
    _kernels.kernel_uniform_stream(state, 32, tail)
    full = uniform_stream(key, n + 32)
    np.testing.assert_array_equal(full[:n], head)
    np.testing.assert_array_equal(full[n:], tail)


def test_bootstrap_indices_in_range_and_deterministic():
    key = tree_key(9, 0, 0)
    idx = bootstrap_indices(key, 1000)
    assert idx.min() >= 0 and idx.max() < 1000
    assert np.array_equal(idx, bootstrap_indices(key, 1000))


def test_mix_key_order_sensitive():
    assert mix_key(1, 2) != mix_key(2, 1)
    assert mix_key(0) != mix_key(1)


def test_uniform_matrix_cell_independence():
    # A cell's value must not depend on the matrix extent requested.
    small = uniform_matrix(mix_key(7), 10, 4)
    large = uniform_matrix(mix_key(7), 50, 9)
    np.testing.assert_array_equal(large[:10, :4], small)


def test_uniform_matrix_statistics():
    u = uniform_matrix(mix_key(11), 400, 250)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.std() - np.sqrt(1 / 12)) < 0.005
