"""Broadcast process on b-ary trees: simulation, exact MGF oracles and bound checks."""

__version__ = "0.1.0"

from .spectral import Phase, analyze, classify_phase, cprime_lower_bound, validate_channel  # noqa: E402
from .broadcast_sim import SimSpec, run_batch, sample_replica  # noqa: E402
from .exact_oracles import brute_force, mgf_exact, moments_exact, square_mgf_quadrature  # noqa: E402

__all__ = [
    "Phase",
    "SimSpec",
    "analyze",
    "brute_force",
    "classify_phase",
    "cprime_lower_bound",
    "mgf_exact",
    "moments_exact",
    "run_batch",
    "sample_replica",
    "square_mgf_quadrature",
    "validate_channel",
]
