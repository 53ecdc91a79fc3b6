"""Numeric helpers: order-independent reductions and counter-based random streams."""

import math

import numpy as np


def exact_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Correctly rounded sum along ``axis`` (``math.fsum`` per output cell).

    The result does not depend on the order of the summands, so any split of
    the work across workers reproduces the same bits.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        return np.float64(math.fsum(arr))
    moved = np.moveaxis(arr, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.fromiter((math.fsum(row) for row in flat), dtype=float, count=flat.shape[0])
    return out.reshape(moved.shape[:-1])


def exact_mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    return exact_sum(arr, axis=axis) / arr.shape[axis]


def derive_key(seed: int, *path: int) -> np.ndarray:
    """128-bit Philox key for the stream at ``path`` under the root ``seed``.

    Keys are split by counter (the spawn path), so streams for different
    replicates or panels never overlap.
    """
    sequence = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(p) for p in path))
    return sequence.generate_state(2, dtype=np.uint64)


def stream_uniforms(key: np.ndarray, stream: int, count: int) -> np.ndarray:
    """``count`` uniforms on the open interval (0, 1) from Philox stream ``stream`` under ``key``.

    Each stream owns a disjoint counter block (the third counter word), and the
    draws sit on a 2**-52 grid offset by half a step so 0 and 1 never occur.
    """
    counter = np.array([0, 0, int(stream), 0], dtype=np.uint64)
    raw = np.random.Philox(key=key, counter=counter).random_raw(count)
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) / 2.0**52
