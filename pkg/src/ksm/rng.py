"""Counter-based random numbers.

Every draw is a pure function of ``(master_seed, replica_index, counter)``,
so a replica produces the same values no matter which worker runs it or in
which order its nodes are visited.  The mixing function is the SplitMix64
finalizer; a replica's draws form a SplitMix64 stream seeded by a key that
is itself the SplitMix64 output for the replica index.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_MASK = (1 << 64) - 1
_INV53 = 2.0**-53


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 output function applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


def derive_seed(master_seed: int, *labels: int) -> int:
    """Fold integer labels into a new 64-bit seed.

    Used to give independent streams to repeats and root states that share
    one master seed.
    """
    z = np.array([master_seed & _MASK], dtype=np.uint64)
    for label in labels:
        z = mix64(z + np.array([(label + 1) & _MASK], dtype=np.uint64) * _GOLDEN)
    return int(mix64(z)[0])


def replica_keys(master_seed: int, indices: np.ndarray) -> np.ndarray:
    """Per-replica stream keys for the given replica indices."""
    base = mix64(np.array([master_seed & _MASK], dtype=np.uint64))
    idx = np.asarray(indices, dtype=np.uint64)
    return mix64(base + (idx + np.uint64(1)) * _GOLDEN)


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws, shape ``(len(keys), len(counters))``."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    z = mix64(keys[:, None] + (counters[None, :] + np.uint64(1)) * _GOLDEN)
    return (z >> _S11).astype(np.float64) * _INV53
