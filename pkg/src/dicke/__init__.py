"""Exact diagonalization of the Dicke model in a displaced-oscillator basis."""
from .core import (
    ExtendedBasis,
    FockBasis,
    ModelParams,
    critical_coupling,
)
from .eigen import ground_state, lanczos_lowest, solve_fixed
from .observables import (
    energy_second_derivative,
    fs_overlap_route,
    fs_sum_route,
    photon_number_per_atom,
    wavefunction_grid,
)

__version__ = "0.1.0"

__all__ = [
    "ExtendedBasis",
    "FockBasis",
    "ModelParams",
    "critical_coupling",
    "energy_second_derivative",
    "fs_overlap_route",
    "fs_sum_route",
    "ground_state",
    "lanczos_lowest",
    "photon_number_per_atom",
    "solve_fixed",
    "wavefunction_grid",
]
