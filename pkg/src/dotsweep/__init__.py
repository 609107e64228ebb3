"""dotsweep: transport in tight-binding networks driven by a swept dot potential."""

from dotsweep.network import (
    ModelError,
    NetworkModel,
    SpectralDecomposition,
    assemble,
    build_comb,
    build_dot_wire_ring,
    build_random_network,
    build_star,
    decompose,
    splitting_ratios_for_bond,
)
from dotsweep.adiabatic import (
    AdiabaticBranch,
    ContinuumParams,
    PoleError,
    berry_curvature,
    branch_occupations,
    collective_peak_conductance,
    comb_conductance,
    comb_dot_occupation,
    comb_self_energy,
    distorted_lorentzian,
    secular_roots,
    self_energy,
    splitting_conductance,
    trace_branch,
)
from dotsweep.dynamics import (
    ChargeResult,
    CurrentRecord,
    PropagationError,
    QuadratureError,
    RegimeResult,
    SweepProtocol,
    WaveState,
    classify_regime,
    initial_adiabatic_state,
    initial_dot_state,
    initial_level_state,
    integrated_charge,
    many_body_current,
    propagate,
    wigner_decay_occupations,
)

__version__ = "0.1.0"
