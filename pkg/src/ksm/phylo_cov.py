"""Covariance of reconstructed internal-node states from i.i.d. leaf samples.

For internal nodes ``u, v`` on level ``m`` the linear reconstruction of the
state at ``u`` is ``(b*lam)**-(n-m)`` times the sum of ``sigma`` over the
level-``n`` leaves below ``u``.  The sample average of the product of two
reconstructions has expectation ``lam**d(u, v)``, which is inverted into a
tree-distance estimate.

Nodes on a level are numbered left to right from 0, so the leaves below
node ``u`` at level ``m`` are the contiguous range
``u * b**(n-m) .. (u+1) * b**(n-m) - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .broadcast_sim import MAX_LEVEL, TreeSampler, check_budget
from .errors import BudgetExceeded, InvalidPair
from .spectral import SpectralData

SAMPLE_BUDGET = 2**32
CHUNK = 8192


@dataclass(frozen=True)
class SampleMatrix:
    n: int
    b: int
    leaf_states: np.ndarray  # (ell, b**n) state indices
    leaf_sigma: np.ndarray  # (ell, b**n) nu[state]

    @property
    def ell(self) -> int:
        return self.leaf_sigma.shape[0]

    def leaves_below(self, m: int, u: int) -> slice:
        width = self.b ** (self.n - m)
        return slice(u * width, (u + 1) * width)


@dataclass(frozen=True)
class NodePair:
    m: int
    u: int
    v: int
    b: int

    @property
    def lca_level(self) -> int:
        u, v, level = self.u, self.v, self.m
        while u != v:
            u, v, level = u // self.b, v // self.b, level - 1
        return level

    @property
    def distance(self) -> int:
        return 2 * (self.m - self.lca_level)


def make_pair(m: int, u: int, v: int, b: int, n: int | None = None) -> NodePair:
    """Validated pair of distinct level-``m`` nodes (below level ``n`` if given)."""
    if m < 1 or (n is not None and m >= n):
        raise InvalidPair(f"level m={m} must satisfy 1 <= m < n")
    width = b**m
    if not (0 <= u < width and 0 <= v < width):
        raise InvalidPair(f"nodes ({u}, {v}) outside level {m} (size {width})")
    if u == v:
        raise InvalidPair("u and v must be distinct")
    return NodePair(m, u, v, b)


def generate_samples(sd: SpectralData, n: int, ell: int, master_seed: int) -> SampleMatrix:
    """``ell`` independent stationary-root realizations, all leaf states recorded.

    Replica ``r`` is the same realization that the batch simulator produces
    for ``SimSpec(sd, n, ..., master_seed)`` at index ``r``.
    """
    if not 0 <= n <= MAX_LEVEL:
        raise BudgetExceeded(f"level n={n} outside [0, {MAX_LEVEL}]")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    leaves = sd.b**n
    check_budget(ell, leaves, SAMPLE_BUDGET)
    sampler = TreeSampler(sd, n)
    states = np.empty((ell, leaves), dtype=np.int16 if sd.k > 127 else np.int8)
    for start in range(0, ell, CHUNK):
        stop = min(start + CHUNK, ell)
        keys = rng.replica_keys(master_seed, np.arange(start, stop))
        roots = sampler.roots(keys, None)
        for pos, block in sampler.leaf_blocks(keys, roots):
            states[start:stop, pos:pos + block.shape[1]] = block
    return SampleMatrix(n, sd.b, states, sd.nu[states])


def reconstructed_states(samples: SampleMatrix, m: int, u: int, sd: SpectralData) -> np.ndarray:
    """Per-sample linear reconstruction at node ``u`` of level ``m``."""
    block = samples.leaf_sigma[:, samples.leaves_below(m, u)]
    return block.sum(axis=1) / (sd.b * sd.lam) ** (samples.n - m)


def cov_hat(samples: SampleMatrix, pair: NodePair, sd: SpectralData) -> float:
    if pair.b != samples.b or pair.m >= samples.n:
        raise InvalidPair(f"pair {pair} does not fit a depth-{samples.n} sample tree")
    make_pair(pair.m, pair.u, pair.v, pair.b, samples.n)
    x = reconstructed_states(samples, pair.m, pair.u, sd)
    y = reconstructed_states(samples, pair.m, pair.v, sd)
    return float(np.mean(x * y))


def distance_estimate(cov: float, sd: SpectralData) -> float | None:
    """Invert ``cov = lam**d``; ``None`` when the covariance is not positive.

    Distances between same-level nodes are even, so the target is positive
    for either sign of ``lam`` and ``log|lam|`` is used.
    """
    if not cov > 0 or abs(sd.lam) >= 1:
        return None
    return math.log(cov) / math.log(abs(sd.lam))


@dataclass
class CovExperiment:
    pair: NodePair
    n: int
    ell: int
    values: np.ndarray  # one cov_hat per repeat
    target: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def se(self) -> float:
        if self.values.size < 2:
            return 0.0
        return float(np.std(self.values, ddof=1) / math.sqrt(self.values.size))

    def to_dict(self, sd: SpectralData) -> dict:
        return {
            "n": self.n,
            "m": self.pair.m,
            "pair": [self.pair.u, self.pair.v],
            "distance": self.pair.distance,
            "ell": self.ell,
            "repeats": int(self.values.size),
            "cov_hat_mean": self.mean,
            "cov_hat_se": self.se,
            "target": self.target,
            "z_score": (self.mean - self.target) / self.se if self.se > 0 else None,
            "distance_estimate": distance_estimate(self.mean, sd),
        }


def run_cov_experiment(
    sd: SpectralData, n: int, pair: NodePair, ell: int, repeats: int, master_seed: int
) -> CovExperiment:
    """Repeat the estimator on independent sample matrices (one derived seed each)."""
    make_pair(pair.m, pair.u, pair.v, pair.b, n)
    values = np.array([
        cov_hat(generate_samples(sd, n, ell, rng.derive_seed(master_seed, r)), pair, sd)
        for r in range(repeats)
    ])
    return CovExperiment(pair, n, ell, values, sd.lam**pair.distance)
