"""Channel validation and the spectral data of a broadcast channel.

A channel is a row-stochastic ``k x k`` matrix.  ``analyze`` computes its
stationary distribution, the real eigenvalue of second-largest modulus and a
right eigenvector normalized so that ``sum(pi * nu**2) == 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ComplexSecondEigenvalue,
    NotIrreducible,
    NotKestenStigum,
    NotStochastic,
    TooSmall,
    ZeroLambda,
)

ROW_SUM_TOL = 1e-12
TIE_TOL = 1e-9
ZERO_LAMBDA_TOL = 1e-12
PHASE_TOL = 1e-12
MAX_K = 64


class Phase(str, enum.Enum):
    KESTEN_STIGUM = "KestenStigum"
    SUB_CRITICAL = "SubCritical"
    CRITICAL = "Critical"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ChannelMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True, eq=False)
class SpectralData:
    channel: ChannelMatrix
    b: int
    pi: np.ndarray
    lam: float
    nu: np.ndarray
    ks_product: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ks_product", self.b * self.lam**2)

    @property
    def M(self) -> np.ndarray:
        return self.channel.entries

    @property
    def k(self) -> int:
        return self.channel.k

    @property
    def phase(self) -> Phase:
        return classify_phase(self)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "b": self.b,
            "pi": self.pi.tolist(),
            "lambda": self.lam,
            "nu": self.nu.tolist(),
            "ks_product": self.ks_product,
            "phase": self.phase.value,
        }


def _reachable(adj: np.ndarray, start: int = 0) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = [start]
    while frontier:
        nxt = np.flatnonzero(adj[frontier].any(axis=0) & ~seen)
        seen[nxt] = True
        frontier = nxt.tolist()
    return seen


def validate_channel(entries) -> ChannelMatrix:
    """Check that ``entries`` is an irreducible row-stochastic matrix.

    Raises:
        TooSmall: fewer than two states.
        NotStochastic: a negative or non-finite entry, or a row sum off by
            more than 1e-12.  The message names the offending row.
        NotIrreducible: the positive-entry digraph is not strongly connected.
    """
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotStochastic(f"channel must be a square matrix, got shape {a.shape}")
    k = a.shape[0]
    if k < 2:
        raise TooSmall(f"channel needs at least 2 states, got k={k}")
    if k > MAX_K:
        raise TooSmall(f"channel has k={k} states; at most {MAX_K} are supported")
    for i, row in enumerate(a):
        if not np.all(np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            raise NotStochastic(f"row {i} has an entry outside [0, 1]: {row.tolist()}")
        s = float(np.sum(row))
        if abs(s - 1.0) > ROW_SUM_TOL:
            raise NotStochastic(f"row {i} sums to {s!r}, not 1")
    adj = a > 0
    if not (_reachable(adj).all() and _reachable(adj.T).all()):
        raise NotIrreducible("channel is not irreducible (more than one communicating class)")
    return ChannelMatrix(_frozen(a))


def stationary_distribution(M: np.ndarray) -> np.ndarray:
    # (M^T - I) pi = 0 with the last equation swapped for sum(pi) = 1
    k = M.shape[0]
    A = M.T - np.eye(k)
    A[-1, :] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    return np.linalg.solve(A, rhs)


def _second_eigenvalue(M: np.ndarray) -> float:
    vals = np.linalg.eigvals(M)
    perron = int(np.argmin(np.abs(vals - 1.0)))
    rest = np.delete(vals, perron)
    order = np.argsort(-np.abs(rest), kind="stable")
    rest = rest[order]
    top = rest[0]
    if abs(top.imag) > TIE_TOL:
        raise ComplexSecondEigenvalue(f"second eigenvalue {top} is not real")
    for other in rest[1:]:
        if abs(abs(other) - abs(top)) > TIE_TOL:
            break
        if abs(other - top) > TIE_TOL:
            raise ComplexSecondEigenvalue(
                f"eigenvalues {top} and {other} tie in modulus; the second eigenvalue is ambiguous"
            )
    return float(top.real)


def _canonical_sign(nu: np.ndarray) -> np.ndarray:
    mags = np.abs(nu)
    lead = int(np.flatnonzero(mags >= mags.max() * (1 - TIE_TOL))[0])
    return -nu if nu[lead] < 0 else nu


def analyze(channel: ChannelMatrix, b: int) -> SpectralData:
    """Spectral data of ``channel`` on the ``b``-ary tree."""
    if int(b) != b or b < 2:
        raise ValueError(f"arity b must be an integer >= 2, got {b!r}")
    M = np.array(channel.entries)
    pi = stationary_distribution(M)
    lam = _second_eigenvalue(M)
    if abs(lam) < ZERO_LAMBDA_TOL:
        raise ZeroLambda(f"second eigenvalue {lam!r} is zero; S_n is undefined")
    # null vector of M - lam I via SVD keeps nu real
    _, _, vt = np.linalg.svd(M - lam * np.eye(M.shape[0]))
    nu = vt[-1]
    nu = nu / np.sqrt(np.dot(pi, nu * nu))
    nu = _canonical_sign(nu)
    return SpectralData(channel=channel, b=int(b), pi=_frozen(pi), lam=lam, nu=_frozen(nu))


def classify_phase(sd: SpectralData) -> Phase:
    if sd.ks_product > 1 + PHASE_TOL:
        return Phase.KESTEN_STIGUM
    if sd.ks_product < 1 - PHASE_TOL:
        return Phase.SUB_CRITICAL
    return Phase.CRITICAL


def cprime_lower_bound(sd: SpectralData) -> float:
    """Infimum of the small-zeta quadratic constant for the MGF bound.

    Any strictly larger constant works near zero; only defined above the
    Kesten-Stigum threshold.
    """
    if classify_phase(sd) is not Phase.KESTEN_STIGUM:
        raise NotKestenStigum(f"b*lambda^2 = {sd.ks_product!r} is not above 1")
    kp = sd.ks_product
    nu_inf = float(np.max(np.abs(sd.nu)))
    return nu_inf**2 / (2 * kp) / (1 - 1 / kp)


def symmetric_channel(p: float, k: int = 2) -> ChannelMatrix:
    """k-state symmetric channel that moves to each other state w.p. p/(k-1)."""
    off = p / (k - 1)
    M = np.full((k, k), off)
    np.fill_diagonal(M, 1 - p)
    return validate_channel(M)


def invariant_residuals(sd: SpectralData) -> dict[str, float]:
    """Residuals of the defining identities, for diagnostics and tests."""
    M, pi, nu = sd.M, sd.pi, sd.nu
    return {
        "stationarity": float(np.max(np.abs(pi @ M - pi))),
        "eigen": float(np.max(np.abs(M @ nu - sd.lam * nu))),
        "orthogonality": float(abs(np.dot(pi, nu))),
        "normalization": float(abs(np.dot(pi, nu * nu) - 1.0)),
        "pi_sum": float(abs(pi.sum() - 1.0)),
    }
