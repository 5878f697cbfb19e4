"""Counter-based deterministic random streams.

Every stochastic choice in the package (label smoothing draws, bootstrap
resampling, per-node feature subsets) is derived from a 64-bit key plus a
counter, never from shared mutable RNG state.  Results are therefore
independent of iteration order, thread count, and scheduling.

The mixer is the splitmix64 finalizer; the kernel module carries a scalar
re-implementation that must stay in sync with the constants below.
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

_INV_2_53 = float(2.0**-53)


def _finalize(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer; bijective on 64-bit integers."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))


def mix_key(*parts: int) -> np.uint64:
    """Collapse integer parts into a single stream key (order sensitive)."""
    with np.errstate(over="ignore"):
        z = GOLDEN
        for p in parts:
            z = _finalize(z + np.uint64(int(p) & MASK64))
    return np.uint64(z)


def uniform_matrix(key: np.uint64, n_rows: int, n_cols: int) -> np.ndarray:
    """Per-cell uniforms in [0, 1), a pure function of (key, row, column)."""
    rows = np.arange(1, n_rows + 1, dtype=np.uint64).reshape(-1, 1)
    cols = np.arange(1, n_cols + 1, dtype=np.uint64).reshape(1, -1)
    with np.errstate(over="ignore"):
        h = _finalize(_finalize(np.uint64(key) + rows * GOLDEN) ^ (cols * _MIX_B))
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform_stream(key: np.uint64, count: int, offset: int = 0) -> np.ndarray:
    """Uniforms in [0, 1) at counters offset+1 .. offset+count of the key's stream."""
    c = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _finalize(np.uint64(key) + c * GOLDEN)
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


def bootstrap_indices(key: np.uint64, n: int) -> np.ndarray:
    """n draws with replacement from range(n), consuming counters 1..n."""
    u = uniform_stream(key, n)
    return np.minimum((u * n).astype(np.int64), n - 1)


def stream_state_after(key: np.uint64, consumed: int) -> np.uint64:
    """Kernel-side stream state equivalent to having consumed `consumed` counters."""
    with np.errstate(over="ignore"):
        return np.uint64(np.uint64(key) + np.uint64(consumed) * GOLDEN)


def tree_key(seed: int, label_index: int, tree_index: int) -> np.uint64:
    """Stream key for one tree of one label's ensemble."""
    return mix_key(seed, label_index, tree_index)
