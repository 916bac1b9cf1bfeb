"""Executable checks of the exponential-moment bounds and the sub-critical CLT."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .broadcast_sim import BatchSummary, SimSpec
from .errors import DegenerateGrid, NotConverged, WrongPhase
from .exact_oracles import DEFAULT_NODES, MgfTable, mgf_exact, square_mgf_quadrature
from .spectral import Phase, SpectralData, classify_phase, cprime_lower_bound

DEFAULT_ZETA_GRID = tuple(s * z for z in (0.25, 0.5, 1, 2, 4, 8, 10) for s in (-1, 1))
MIN_NONZERO_ZETA = 8
BURN_IN = 2
GROWTH_TOL = 0.10
STABLE_TOL = 0.05
CLT_MIN_COUNT = 10_000
CLT_SKEW_TOL = 0.1
CLT_KURT_TOL = 0.2
CLT_GAP_SE = 4.0


@dataclass
class BoundReport:
    table: MgfTable
    nu: np.ndarray
    empirical_c: np.ndarray  # indexed like table.levels
    non_increasing: bool
    growth: float  # relative increase from level n_max // 2 to n_max
    uniformly_bounded: bool
    declared_c: float
    verdicts: list[bool]
    model_id: str = ""
    phase: Phase | None = None
    c_prime_floor: float | None = None
    increment_ratio: float = math.nan

    @property
    def levels(self) -> list[int]:
        return self.table.levels

    def c(self, n: int) -> float:
        return float(self.empirical_c[self.table.levels.index(n)])

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "phase": self.phase.value if self.phase else None,
            "zeta_grid": self.table.zeta_grid.tolist(),
            "levels": list(self.table.levels),
            "empirical_c": self.empirical_c.tolist(),
            "c_prime_floor": self.c_prime_floor,
            "declared_c": self.declared_c,
            "verdicts": self.verdicts,
            "non_increasing_after_burn_in": self.non_increasing,
            "growth_half_to_max": self.growth,
            "increment_ratio": self.increment_ratio,
            "uniformly_bounded": self.uniformly_bounded,
        }


def extract_empirical_c(
    table: MgfTable, nu, *, declared_c: float | None = None, model_id: str = ""
) -> BoundReport:
    """Smallest quadratic constant that fits each level of ``table``.

    ``empirical_c[n]`` is the max over root states and nonzero grid points of
    ``(gamma_n^i(z) - nu_i z) / z**2``.  The sequence counts as uniformly
    bounded if it never increases after the burn-in levels, or if it grows
    by less than 10% between level ``n_max // 2`` and ``n_max``.
    """
    nu = np.asarray(nu, dtype=np.float64)
    z = table.zeta_grid
    nz = z != 0
    if np.count_nonzero(nz) < MIN_NONZERO_ZETA:
        raise DegenerateGrid(f"need at least {MIN_NONZERO_ZETA} nonzero zeta points")
    zz = z[nz]
    excess = (table.values[:, :, nz] - nu[None, :, None] * zz) / zz**2
    emp = excess.reshape(len(table.levels), -1).max(axis=1)

    levels = table.levels
    after = [li for li, n in enumerate(levels) if n >= BURN_IN]
    non_increasing = all(emp[b] <= emp[a] for a, b in zip(after, after[1:]))
    n_max = levels[-1]
    half = emp[levels.index(n_max // 2)] if n_max // 2 in levels else emp[0]
    top = emp[-1]
    if half > 0:
        growth = float((top - half) / half)
    else:
        growth = 0.0 if top <= half else math.inf
    bounded = bool(non_increasing or growth < GROWTH_TOL)

    # diagnostic: ratio of the last two increments (< 1 means geometric settling)
    ratio = math.nan
    if len(emp) >= 3:
        d1, d2 = emp[-2] - emp[-3], emp[-1] - emp[-2]
        if d1 != 0:
            ratio = float(d2 / d1)

    if declared_c is None:
        declared_c = float(top)
    verdicts = [bool(c <= declared_c) for c in emp]
    return BoundReport(
        table=table, nu=nu, empirical_c=emp, non_increasing=non_increasing,
        growth=growth, uniformly_bounded=bounded, declared_c=float(declared_c),
        verdicts=verdicts, model_id=model_id, increment_ratio=ratio,
    )


def bound_report(
    sd: SpectralData,
    n_max: int = 12,
    zeta_grid: Sequence[float] = DEFAULT_ZETA_GRID,
    *,
    declared_c: float | None = None,
    model_id: str = "",
) -> BoundReport:
    """Tabulate the exact log-MGF and extract the empirical constants for ``sd``."""
    table = mgf_exact(sd, n_max, zeta_grid)
    report = extract_empirical_c(table, sd.nu, declared_c=declared_c, model_id=model_id)
    report.phase = classify_phase(sd)
    if report.phase is Phase.KESTEN_STIGUM:
        report.c_prime_floor = cprime_lower_bound(sd)
    return report


@dataclass
class TheoremCheck:
    c: float
    passed: bool
    margins: np.ndarray  # bound - gamma, shaped like table.values
    first_violation: tuple[int, int, float, float] | None = None

    def rows(self, table: MgfTable, nu: np.ndarray):
        """(n, i, zeta, gamma, bound, margin) for every table cell."""
        for li, n in enumerate(table.levels):
            for i in range(table.values.shape[1]):
                for zi, z in enumerate(table.zeta_grid):
                    g = float(table.values[li, i, zi])
                    m = float(self.margins[li, i, zi])
                    yield n, i, float(z), g, g + m, m


def check_theorem_bound(report: BoundReport, c: float, *, atol: float = 0.0) -> TheoremCheck:
    """Check ``gamma_n^i(z) <= nu_i z + c z**2`` at every cell of the report's table."""
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c!r}")
    t = report.table
    z = t.zeta_grid[None, None, :]
    bound = report.nu[None, :, None] * z + c * z * z
    margins = bound - t.values
    bad = np.argwhere(margins < -atol)
    first = None
    if bad.size:
        li, i, zi = bad[0]
        first = (t.levels[li], int(i), float(t.zeta_grid[zi]), float(margins[li, i, zi]))
    return TheoremCheck(float(c), first is None, margins, first)


@dataclass
class CorollaryReport:
    zeta_probe: float
    levels: list[int]
    values: np.ndarray  # (levels, k) square-MGF per root state
    converged: list[bool]
    sup: float
    stabilized: bool

    @property
    def level_sup(self) -> np.ndarray:
        return self.values.max(axis=1)

    def to_dict(self) -> dict:
        return {
            "zeta_probe": self.zeta_probe,
            "levels": self.levels,
            "sup_per_level": [float(v) for v in self.level_sup],
            "converged": self.converged,
            "sup": self.sup,
            "stabilized": self.stabilized,
        }


def check_corollary_bound(
    sd: SpectralData,
    n_range: Sequence[int],
    zeta_probe: float,
    *,
    nodes: int = DEFAULT_NODES,
    require_convergence: bool = True,
) -> CorollaryReport:
    """Square-MGF at ``zeta_probe`` across levels, with its supremum and stability.

    The sequence is stable when the last three levels differ by less than 5%
    relative to their minimum.  Raises NotConverged if quadrature fails at
    some level and ``require_convergence`` is set.
    """
    levels = list(n_range)
    results = [square_mgf_quadrature(sd, n, zeta_probe, nodes) for n in levels]
    converged = [r.converged for r in results]
    if require_convergence and not all(converged):
        bad = [n for n, ok in zip(levels, converged) if not ok]
        raise NotConverged(f"square-MGF quadrature did not converge at levels {bad}")
    values = np.array([r.values for r in results])
    sups = values.max(axis=1)
    tail = sups[-3:]
    stable = bool(np.all(np.isfinite(tail)) and (tail.max() - tail.min()) / tail.min() < STABLE_TOL)
    return CorollaryReport(float(zeta_probe), levels, values, converged, float(sups.max()), stable)


@dataclass
class CltReport:
    n: int
    per_root: list[dict] = field(default_factory=list)
    max_mean_gap: float = 0.0
    gap_in_se: float = 0.0
    gaussian_consistent: bool = False

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "per_root_state": self.per_root,
            "max_mean_gap": self.max_mean_gap,
            "gap_in_pooled_se": self.gap_in_se,
            "gaussian_consistent": self.gaussian_consistent,
        }


def clt_diagnostics(spec: SimSpec, batch: BatchSummary, *, min_count: int = CLT_MIN_COUNT) -> CltReport:
    """Gaussian-consistency diagnostics for Q_n below the Kesten-Stigum threshold."""
    if classify_phase(spec.sd) is not Phase.SUB_CRITICAL:
        raise WrongPhase(f"CLT diagnostics need b*lambda^2 < 1, got {spec.sd.ks_product!r}")
    stats = [batch.per_root[i] for i in sorted(batch.per_root)]
    low = [st.state for st in stats if st.count < min_count]
    if low:
        raise ValueError(f"root states {low} have fewer than {min_count} replicas")

    per_root = []
    ok = True
    for st in stats:
        q = st.q
        per_root.append({
            "root_state": st.state + 1,
            "count": q.count,
            "mean": q.mean,
            "mean_se": q.mean_se,
            "variance": q.variance,
            "skewness": q.skewness,
            "skewness_se": q.skewness_se,
            "excess_kurtosis": q.excess_kurtosis,
            "kurtosis_se": q.kurtosis_se,
        })
        ok &= q.variance > 0
        ok &= abs(q.skewness) <= CLT_SKEW_TOL and abs(q.excess_kurtosis) <= CLT_KURT_TOL

    gap, gap_se = 0.0, 0.0
    for a in range(len(stats)):
        for b in range(a + 1, len(stats)):
            qa, qb = stats[a].q, stats[b].q
            d = abs(qa.mean - qb.mean)
            se = math.hypot(qa.mean_se, qb.mean_se)
            units = d / se if se > 0 else (0.0 if d == 0 else math.inf)
            if units > gap_se or (units == gap_se and d > gap):
                gap, gap_se = d, units
    ok &= gap_se <= CLT_GAP_SE
    return CltReport(spec.n, per_root, gap, gap_se, bool(ok))
