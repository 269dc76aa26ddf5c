"""Variational Krylov continued-fraction Green's functions for impurity models."""

__version__ = "0.1.0"

from .aim import (
    AimModel,
    SpectralDecomposition,
    classical_lanczos,
    dense_hamiltonian,
    exact_diagonalize,
    exact_gf,
    krylov_dimension,
    random_aim,
)
from .ansatz import (
    AnsatzCircuit,
    VqeOptions,
    VqeResult,
    build_hea,
    parameter_shift_gradient,
    prepare_state,
    vqe_excited_states,
    vqe_ground_state,
)
from .emulator import (
    GateOp,
    StateVector,
    apply_gate,
    apply_pauli_exponential,
    expectation,
    hadamard_test,
    overlap,
    trotter_overlap,
    zero_state,
)
from .greens import (
    EnergyGrid,
    GfBranch,
    GreensFunction,
    MomentSequence,
    assemble_finite_t_gf,
    assemble_zero_t_gf,
    compute_moments_iterative,
    continued_fraction,
    dos,
    moments_from_tridiagonal,
)
from .krylov import (
    KrylovOptions,
    KrylovStep,
    LanczosCoefficients,
    compute_b_squared,
    eps0,
    eps1,
    eps2,
    krylov_cost,
    run_kvqa,
)
from .pauli import (
    FermionOperator,
    PauliSum,
    PauliTerm,
    fermion_hamiltonian_to_pauli,
    jordan_wigner,
    pauli_mul,
    simplify,
)
from .solvers import GfSolution, KvqaGfSolver, OracleGfSolver
