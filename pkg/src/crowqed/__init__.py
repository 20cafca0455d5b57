"""crowqed: solvers for two-level atoms coupled to a coupled-resonator
waveguide with a cosine band.

The package covers exact sector propagation (Krylov), a time-local
master equation with memory-integral rates, its long-time Markov limit,
exact single- and two-atom decay amplitudes from memory-kernel integral
equations, atom-photon bound states, entanglement observables, and the
analysis layer (error metric, relaxation fits, checkpointed sweeps) plus
a command-line interface.
"""

from .analysis import (
    FitResult,
    SweepTable,
    error_metric,
    fit_relaxation,
    relaxation_model,
    run_sweep,
    write_sweep_table,
)
from .dynamics import (
    BoundStateResult,
    DensityTrajectory,
    StateTrajectory,
    VolterraResult,
    bound_states,
    evolve_lindblad,
    evolve_tcl2,
    propagate_krylov,
    solve_decay_amplitude,
    solve_two_atom_amplitudes,
)
from .kernels import (
    Kernel,
    RateMatrix,
    alpha_closed,
    alpha_discrete,
    alpha_lorentzian,
    closed_kernel,
    discrete_kernel,
    lorentzian_kernel,
    markov_rates,
    rate_matrix,
    rate_table,
    write_kernel_dump,
)
from .model import (
    BasisIndex,
    DerivedParams,
    HamiltonianMatrix,
    ModelParams,
    SECTORS,
    build_basis,
    build_hamiltonian,
    derive_params,
    hilbert_dimension,
    named_initial_state,
    ring_sites,
)
from .observables import (
    ReducedState,
    atomic_populations,
    concurrence,
    concurrence_independent,
    entanglement_entropy,
    reduce_to_atoms,
    von_neumann_entropy,
)

__version__ = "0.1.0"

__all__ = [
    "BasisIndex",
    "BoundStateResult",
    "DensityTrajectory",
    "DerivedParams",
    "FitResult",
    "HamiltonianMatrix",
    "Kernel",
    "ModelParams",
    "RateMatrix",
    "ReducedState",
    "SECTORS",
    "StateTrajectory",
    "SweepTable",
    "VolterraResult",
    "alpha_closed",
    "alpha_discrete",
    "alpha_lorentzian",
    "atomic_populations",
    "bound_states",
    "build_basis",
    "build_hamiltonian",
    "closed_kernel",
    "concurrence",
    "concurrence_independent",
    "derive_params",
    "discrete_kernel",
    "entanglement_entropy",
    "error_metric",
    "evolve_lindblad",
    "evolve_tcl2",
    "fit_relaxation",
    "hilbert_dimension",
    "lorentzian_kernel",
    "markov_rates",
    "named_initial_state",
    "propagate_krylov",
    "rate_matrix",
    "rate_table",
    "reduce_to_atoms",
    "relaxation_model",
    "ring_sites",
    "run_sweep",
    "solve_decay_amplitude",
    "solve_two_atom_amplitudes",
    "von_neumann_entropy",
    "write_kernel_dump",
    "write_sweep_table",
]
