"""Exact ground truth for S_n: MGF and moment recursions, enumeration, quadrature.

Conditioned on the root state the ``b`` subtrees below the root are i.i.d.,
which gives the one-level recursion

    gamma_{n+1}^i(z) = b * log(sum_j M_ij * exp(gamma_n^j(z / (b*lam))))

for the log-MGF ``gamma_n^i(z) = log E[exp(z S_n) | root = i]``.  The
argument shrinks (or grows) by ``b*lam`` per level, so each ``(n, z)`` value
is computed by its own pull-back chain instead of interpolating a grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExceeded, NegativeZeta, ZeroLambda
from .spectral import ZERO_LAMBDA_TOL, SpectralData

BRUTE_FORCE_BUDGET = 2**24
DEFAULT_NODES = 64
QUAD_RTOL = 1e-6


def _check_lambda(sd: SpectralData) -> None:
    if abs(sd.lam) < ZERO_LAMBDA_TOL:
        raise ZeroLambda("lambda is zero")


def _log_channel(sd: SpectralData) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(sd.M)


def log_mgf(sd: SpectralData, n: int, zetas) -> np.ndarray:
    """``gamma_n^i(z)`` for every ``z`` in ``zetas``; shape ``(len(zetas), k)``."""
    _check_lambda(sd)
    z = np.asarray(zetas, dtype=np.float64).reshape(-1)
    logM = _log_channel(sd)
    scale = sd.b * sd.lam
    g = np.outer(z / scale**n, sd.nu)
    for _ in range(n):
        # g[:, j] at level m -> level m+1; -inf weights drop zero entries
        g = sd.b * logsumexp(logM[None, :, :] + g[:, None, :], axis=2)
    # the MGF at 0 is exactly 1; the recursion would leave row-sum rounding there
    g[z == 0] = 0.0
    return g


@dataclass
class MgfTable:
    zeta_grid: np.ndarray
    levels: list[int]
    values: np.ndarray  # values[level_index, i, zeta_index] = gamma_n^i(zeta)

    def gamma(self, n: int) -> np.ndarray:
        """``(k, len(zeta_grid))`` slice for level ``n``."""
        return self.values[self.levels.index(n)]

    def rows(self):
        for li, n in enumerate(self.levels):
            for i in range(self.values.shape[1]):
                for zi, z in enumerate(self.zeta_grid):
                    yield n, i, float(z), float(self.values[li, i, zi])


def mgf_exact(sd: SpectralData, n_max: int, zeta_grid: Sequence[float]) -> MgfTable:
    """Log-MGF table for levels ``0..n_max`` on a sorted copy of ``zeta_grid``."""
    zeta = np.sort(np.asarray(zeta_grid, dtype=np.float64))
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta grid must be finite")
    levels = list(range(n_max + 1))
    values = np.stack([log_mgf(sd, n, zeta).T for n in levels])
    return MgfTable(zeta, levels, values)


@dataclass
class MomentTable:
    mean: np.ndarray  # (n_max + 1, k)
    second: np.ndarray  # E[S_n^2 | root = i]

    @property
    def variance(self) -> np.ndarray:
        return self.second - self.mean**2


def moments_exact(sd: SpectralData, n_max: int) -> MomentTable:
    """First and second conditional moments of S_n for ``n = 0..n_max``.

    The second moment follows
    v_{n+1}(i) = (1/(b lam^2)) sum_j M_ij v_n(j) + (1 - 1/b) * nu_i^2.
    The mean is nu at every level.  Iterating (1/lam) M on it would
    amplify rounding in the non-nu directions by lam**-n, so it is not
    recomputed.
    """
    _check_lambda(sd)
    M, nu, b, lam = sd.M, sd.nu, sd.b, sd.lam
    second = [nu * nu]
    for _ in range(n_max):
        second.append(M @ second[-1] / (b * lam * lam) + (1 - 1 / b) * nu * nu)
    return MomentTable(np.tile(nu, (n_max + 1, 1)), np.array(second))


@dataclass
class BruteForceResult:
    """Every state assignment of T_n below a fixed root, one row per assignment."""

    root_state: int
    n: int
    leaf_census: np.ndarray  # (configs, k)
    values: np.ndarray  # S_n per configuration
    probs: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.values))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.probs, self.values**2))

    def log_mgf(self, zetas) -> np.ndarray:
        z = np.asarray(zetas, dtype=np.float64).reshape(-1)
        return logsumexp(np.outer(z, self.values), b=self.probs[None, :], axis=1)

    def distribution(self) -> list[tuple[float, float]]:
        """(value, probability) pairs with configurations of equal census merged."""
        acc: dict[tuple[int, ...], list] = {}
        for c, v, p in zip(map(tuple, self.leaf_census.tolist()), self.values, self.probs):
            if c in acc:
                acc[c][1] += p
            else:
                acc[c] = [float(v), float(p)]
        return sorted((v, p) for v, p in acc.values())


def brute_force(sd: SpectralData, n: int, root_state: int) -> BruteForceResult:
    """Enumerate all assignments of the tree of depth ``n`` rooted at ``root_state``."""
    b, k = sd.b, sd.k
    nodes = (b ** (n + 1) - 1) // (b - 1)
    if k**nodes > BRUTE_FORCE_BUDGET:
        raise BudgetExceeded(f"k^nodes = {k}^{nodes} exceeds {BRUTE_FORCE_BUDGET}")
    M = sd.M
    states = np.array([[root_state]])
    probs = np.array([1.0])
    for level in range(1, n + 1):
        width = b**level
        choices = np.array(list(itertools.product(range(k), repeat=width)))
        parent_of = np.arange(width) // b
        new_states, new_probs = [], []
        for row, p in zip(states, probs):
            parents = row[parent_of]
            edge = M[parents[None, :], choices]
            w = p * np.prod(edge, axis=1)
            keep = w > 0
            new_states.append(choices[keep])
            new_probs.append(w[keep])
        states = np.concatenate(new_states)
        probs = np.concatenate(new_probs)
    census = np.stack([np.count_nonzero(states == s, axis=1) for s in range(k)], axis=1)
    values = (sd.nu[states]).sum(axis=1) / (b * sd.lam) ** n
    return BruteForceResult(root_state, n, census, values, probs)


@dataclass
class SquareMgf:
    n: int
    zeta: float
    nodes: int
    log_values: np.ndarray  # per root state
    log_half_node_values: np.ndarray
    converged: bool

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @property
    def relative_change(self) -> float:
        """Largest relative change between ``nodes // 2`` and ``nodes`` points."""
        return float(np.max(np.abs(np.expm1(self.log_half_node_values - self.log_values))))


def _log_gauss_hermite(sd, n, zeta, nodes):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    # E_X[Gamma(sqrt(2 zeta) X)], X ~ N(0, 1), with X = sqrt(2) t
    g = log_mgf(sd, n, 2.0 * math.sqrt(zeta) * x)
    return logsumexp(g, b=w[:, None], axis=0) - 0.5 * math.log(math.pi)


def square_mgf_quadrature(
    sd: SpectralData, n: int, zeta: float, nodes: int = DEFAULT_NODES
) -> SquareMgf:
    """``E[exp(zeta * S_n**2) | root = i]`` for each ``i`` by Gauss-Hermite quadrature.

    Uses E[exp(zeta S^2)] = E_X[E[exp(sqrt(2 zeta) X S)]] for a standard normal
    X independent of S.  Convergence is judged by the relative change between
    ``nodes // 2`` and ``nodes`` points.  Values are carried as logarithms, so
    a divergent case shows up as ``converged=False`` rather than overflow.
    """
    if zeta < 0:
        raise NegativeZeta(f"zeta must be >= 0, got {zeta!r}")
    if nodes < 16:
        raise ValueError("at least 16 quadrature nodes are required")
    if zeta == 0:
        zeros = np.zeros(sd.k)
        return SquareMgf(n, 0.0, nodes, zeros, zeros.copy(), True)
    full = _log_gauss_hermite(sd, n, zeta, nodes)
    half = _log_gauss_hermite(sd, n, zeta, nodes // 2)
    rel = np.abs(np.expm1(half - full))
    converged = bool(np.all(np.isfinite(full)) and np.all(rel < QUAD_RTOL))
    return SquareMgf(n, float(zeta), nodes, full, half, converged)
