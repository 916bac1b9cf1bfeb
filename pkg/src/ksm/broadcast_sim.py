"""Streaming simulation of the broadcast process on the b-ary tree.

Replicas are simulated in fixed-size chunks.  Inside a chunk the tree is
walked depth first with all replicas of the chunk advanced together, so the
live state is one vector per level plus a small bottom block of at most
``BLOCK_LEAVES`` leaves; nothing of size ``b**n`` is ever held.  Random draws
come from :mod:`ksm.rng` keyed by ``(master_seed, replica, node)``, where
``node`` is the breadth-first index of the node receiving the draw (0 for the
root), so a replica's realization does not depend on chunking or threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import rng
from .accum import LogMgf, Moments
from .errors import BudgetExceeded
from .spectral import SpectralData

MAX_LEVEL = 24
MAX_WORK = 2**40
CHUNK = 8192
BLOCK_LEAVES = 64


def default_threads() -> int:
    env = os.environ.get("KSM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class SimSpec:
    """What to simulate.  ``root_state=None`` draws the root from pi."""

    sd: SpectralData
    n: int
    replicas: int
    master_seed: int
    root_state: int | None = None

    def __post_init__(self):
        if not 0 <= self.n <= MAX_LEVEL:
            raise BudgetExceeded(f"level n={self.n} outside [0, {MAX_LEVEL}]")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.root_state is not None and not 0 <= self.root_state < self.sd.k:
            raise ValueError(f"root state {self.root_state} outside [0, {self.sd.k})")

    @property
    def leaves(self) -> int:
        return self.sd.b**self.n


@dataclass(frozen=True)
class ReplicaResult:
    root_state: int
    s_n: float
    q_n: float
    census: tuple[int, ...]


def _thresholds(probs: np.ndarray) -> np.ndarray:
    """Inverse-CDF cut points: state = number of cut points <= u."""
    probs = np.atleast_2d(probs)
    cum = np.cumsum(probs, axis=1)[:, :-1]
    tail = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1][:, 1:]
    # a cut point with no mass left above it must never be crossed
    return np.where(tail > 0, cum, np.inf)


class TreeSampler:
    """Draws level-``n`` leaf states for a set of replicas, block by block."""

    def __init__(self, sd: SpectralData, n: int):
        self.sd = sd
        self.n = n
        self.b = sd.b
        self.k = sd.k
        self.cuts = _thresholds(sd.M)
        self.root_cuts = _thresholds(sd.pi)[0]
        block = 0
        while block < n and self.b ** (block + 1) <= BLOCK_LEAVES:
            block += 1
        self.block = max(block, 1) if n > 0 else 0

    def _offset(self, level: int) -> int:
        return (self.b**level - 1) // (self.b - 1)

    def _step(self, parents: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.k == 2:
            return (u >= self.cuts[parents, 0]).astype(np.intp)
        return np.sum(u[..., None] >= self.cuts[parents], axis=-1)

    def roots(self, keys: np.ndarray, root_state: int | None) -> np.ndarray:
        if root_state is not None:
            return np.full(keys.shape[0], root_state, dtype=np.intp)
        u = rng.uniforms(keys, np.zeros(1, dtype=np.uint64))[:, 0]
        return np.sum(u[:, None] >= self.root_cuts[None, :], axis=1).astype(np.intp)

    def leaf_blocks(self, keys: np.ndarray, roots: np.ndarray) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(first_leaf_position, states)`` blocks covering all leaves in order."""
        yield from self._visit(keys, 0, 0, roots)

    def _visit(self, keys, level, pos, states):
        b, n = self.b, self.n
        if n - level <= self.block:
            cur = states[:, None]
            cur_pos = np.array([pos], dtype=np.int64)
            for lv in range(level, n):
                cur_pos = (cur_pos[:, None] * b + np.arange(b)).ravel()
                u = rng.uniforms(keys, (self._offset(lv + 1) + cur_pos).astype(np.uint64))
                cur = self._step(np.repeat(cur, b, axis=1), u)
            yield pos * b ** (n - level), cur
            return
        base = self._offset(level + 1) + pos * b
        u = rng.uniforms(keys, np.arange(base, base + b, dtype=np.uint64))
        for c in range(b):
            child = self._step(states, u[:, c])
            yield from self._visit(keys, level + 1, pos * b + c, child)


def simulate_chunk(spec: SimSpec, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    """Root states and leaf censuses for replicas ``start..stop-1``."""
    keys = rng.replica_keys(spec.master_seed, np.arange(start, stop))
    sampler = TreeSampler(spec.sd, spec.n)
    roots = sampler.roots(keys, spec.root_state)
    census = np.zeros((stop - start, spec.sd.k), dtype=np.int64)
    for _, block in sampler.leaf_blocks(keys, roots):
        for s in range(spec.sd.k):
            census[:, s] += np.count_nonzero(block == s, axis=1)
    return roots, census


def estimator_values(sd: SpectralData, n: int, census: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """S_n and Q_n from leaf censuses (rows of ``census``)."""
    census = np.atleast_2d(census)
    total = np.zeros(census.shape[0])
    for i in range(sd.k):
        total += census[:, i] * sd.nu[i]
    s = total / (sd.b * sd.lam) ** n
    q = s * (sd.b * sd.lam**2) ** (n / 2)
    return s, q


def sample_replica(spec: SimSpec, replica_index: int) -> ReplicaResult:
    if not 0 <= replica_index < spec.replicas:
        raise IndexError(f"replica {replica_index} outside [0, {spec.replicas})")
    roots, census = simulate_chunk(spec, replica_index, replica_index + 1)
    s, q = estimator_values(spec.sd, spec.n, census)
    return ReplicaResult(int(roots[0]), float(s[0]), float(q[0]), tuple(int(c) for c in census[0]))


@dataclass
class RootStats:
    """Tallies for the replicas that started in one root state."""

    state: int
    s: Moments
    q: Moments
    mgf: list[LogMgf]
    square_mgf: list[LogMgf]

    @classmethod
    def of(cls, state, s, q, zeta_grid, square_grid) -> "RootStats":
        return cls(
            state,
            Moments.of(s),
            Moments.of(q),
            [LogMgf.of(z, s) for z in zeta_grid],
            [LogMgf.of(z, s * s) for z in square_grid],
        )

    @property
    def count(self) -> int:
        return self.s.count

    def merge(self, other: "RootStats") -> "RootStats":
        return RootStats(
            self.state,
            self.s.merge(other.s),
            self.q.merge(other.q),
            [a.merge(b) for a, b in zip(self.mgf, other.mgf)],
            [a.merge(b) for a, b in zip(self.square_mgf, other.square_mgf)],
        )

    def to_dict(self) -> dict:
        return {
            "root_state": self.state + 1,
            "count": self.count,
            "s_n": self.s.to_dict(),
            "q_n": self.q.to_dict(),
            "mgf": [m.to_dict() for m in self.mgf],
            "square_mgf": [m.to_dict() for m in self.square_mgf],
        }


@dataclass
class BatchSummary:
    n: int
    b: int
    k: int
    replicas: int
    zeta_grid: tuple[float, ...]
    square_zeta_grid: tuple[float, ...]
    per_root: dict[int, RootStats]
    census_total: np.ndarray
    rows: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def root(self, i: int) -> RootStats:
        return self.per_root[i]

    def merge(self, other: "BatchSummary") -> "BatchSummary":
        """Combine two summaries over the same tree and grids (e.g. one per root state)."""
        if (self.n, self.b, self.k, self.zeta_grid, self.square_zeta_grid) != (
            other.n, other.b, other.k, other.zeta_grid, other.square_zeta_grid
        ):
            raise ValueError("cannot merge summaries of different experiments")
        per_root = dict(self.per_root)
        for i, st in sorted(other.per_root.items()):
            per_root[i] = per_root[i].merge(st) if i in per_root else st
        return BatchSummary(
            self.n, self.b, self.k, self.replicas + other.replicas,
            self.zeta_grid, self.square_zeta_grid,
            dict(sorted(per_root.items())),
            self.census_total + other.census_total,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "b": self.b,
            "k": self.k,
            "replicas": self.replicas,
            "zeta_grid": list(self.zeta_grid),
            "square_zeta_grid": list(self.square_zeta_grid),
            "per_root_state": [st.to_dict() for _, st in sorted(self.per_root.items())],
            "census_total": self.census_total.tolist(),
        }


def _chunk_summary(spec, zeta_grid, square_grid, start, stop, keep_rows):
    roots, census = simulate_chunk(spec, start, stop)
    s, q = estimator_values(spec.sd, spec.n, census)
    per_root = {}
    for i in np.unique(roots).tolist():
        sel = roots == i
        per_root[i] = RootStats.of(i, s[sel], q[sel], zeta_grid, square_grid)
    rows = None
    if keep_rows:
        rows = {"replica": np.arange(start, stop), "root_state": roots, "s_n": s, "q_n": q, "census": census}
    summary = BatchSummary(
        spec.n, spec.sd.b, spec.sd.k, stop - start, zeta_grid, square_grid,
        per_root, census.sum(axis=0),
    )
    return summary, rows


def check_budget(replicas: int, leaves: int, limit: int = MAX_WORK) -> None:
    if replicas * leaves > limit:
        raise BudgetExceeded(f"{replicas} replicas x {leaves} leaves exceeds the budget of {limit}")


def run_batch(
    spec: SimSpec,
    zeta_grid: Sequence[float] = (),
    *,
    square_zeta_grid: Sequence[float] = (),
    threads: int | None = None,
    keep_rows: bool = False,
) -> BatchSummary:
    """Simulate all replicas of ``spec`` and summarize S_n and Q_n per root state.

    The replica range is cut into fixed chunks of ``CHUNK`` replicas and the
    chunk summaries are merged in chunk order, so the result is bit-identical
    for any ``threads``.  ``square_zeta_grid`` adds estimates of
    E[exp(zeta * S_n**2)].  With ``keep_rows`` the per-replica values are
    attached as ``summary.rows``.
    """
    zeta_grid = tuple(float(z) for z in zeta_grid)
    square_grid = tuple(float(z) for z in square_zeta_grid)
    if not all(math.isfinite(z) for z in zeta_grid + square_grid):
        raise ValueError("zeta values must be finite")
    check_budget(spec.replicas, spec.leaves)
    bounds = [(a, min(a + CHUNK, spec.replicas)) for a in range(0, spec.replicas, CHUNK)]
    threads = threads or default_threads()

    def work(bound):
        return _chunk_summary(spec, zeta_grid, square_grid, *bound, keep_rows)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(bd) for bd in bounds]

    summary = parts[0][0]
    for part, _ in parts[1:]:
        summary = summary.merge(part)
    if keep_rows:
        summary.rows = {
            key: np.concatenate([rows[key] for _, rows in parts]) for key in parts[0][1]
        }
    return summary


def run_per_root(
    sd: SpectralData,
    n: int,
    replicas_per_root: int,
    master_seed: int,
    zeta_grid: Sequence[float] = (),
    **kwargs,
) -> BatchSummary:
    """One fixed-root batch per state, each on its own derived seed, merged."""
    summary = None
    for i in range(sd.k):
        spec = SimSpec(sd, n, replicas_per_root, rng.derive_seed(master_seed, i), root_state=i)
        part = run_batch(spec, zeta_grid, **kwargs)
        summary = part if summary is None else summary.merge(part)
    return summary


@dataclass(frozen=True)
class CensusCheck:
    applicable: bool
    frequencies: tuple[float, ...] = ()
    pi: tuple[float, ...] = ()
    max_deviation: float = math.nan


def census_distribution_check(spec: SimSpec, batch: BatchSummary) -> CensusCheck:
    """Pooled leaf-state frequencies against pi; only meaningful for stationary roots."""
    if spec.root_state is not None:
        return CensusCheck(applicable=False)
    freq = batch.census_total / (batch.replicas * spec.leaves)
    dev = float(np.max(np.abs(freq - spec.sd.pi)))
    return CensusCheck(True, tuple(freq.tolist()), tuple(spec.sd.pi.tolist()), dev)
