"""Shared fixtures and independent reference routes used as test oracles.

The reference implementations here (dense eigendecomposition propagator,
brute-force state enumeration, product-channel construction) are kept
deliberately separate from the package code paths they check.
"""

import numpy as np
import pytest

from crowqed.model import ModelParams

# One `AC<k> PASS|FAIL` line per acceptance criterion, collected by
# tests/test_acceptance.py::report and echoed after the run so the lines
# are visible in plain `pytest -v` output (stdout capture would otherwise
# hide them unless a test fails).
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def dense_reference_propagate(H_dense, psi0, times):
    """Evolve psi0 under exp(-i H t) by full eigendecomposition.

    Independent oracle for the Krylov propagator: O(dim^3) once, then
    exact (to rounding) at every requested time.
    """
    H_dense = np.asarray(H_dense)
    evals, evecs = np.linalg.eigh(H_dense)
    coeff = evecs.conj().T @ psi0
    frames = np.empty((len(times), len(psi0)), dtype=complex)
    for i, t in enumerate(times):
        frames[i] = evecs @ (np.exp(-1j * evals * t) * coeff)
    return frames


def single_atom_params(M=400, omega_S=49.0, A=100.0, B=50.0, g=1.0):
    return ModelParams(A=A, B=B, g_coupling=g, M=M, h0=1.0,
                       atom_positions=(0,), omega_S=omega_S)


def two_atom_params(L, M=400, omega_S=49.0, A=100.0, B=50.0, g=1.0):
    return ModelParams(A=A, B=B, g_coupling=g, M=M, h0=1.0,
                       atom_positions=(0, L), omega_S=omega_S)


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)


def random_density_operator(rng, dim):
    """Random full-rank density operator (Ginibre construction)."""
    G = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_x_state(rng):
    """Random two-qubit X state in the {|11>,|10>,|01>,|00>} basis."""
    p = rng.dirichlet(np.ones(4))
    r14 = np.sqrt(p[0] * p[3]) * rng.uniform(0, 1) * np.exp(2j * np.pi * rng.uniform())
    r23 = np.sqrt(p[1] * p[2]) * rng.uniform(0, 1) * np.exp(2j * np.pi * rng.uniform())
    rho = np.diag(p).astype(complex)
    rho[0, 3] = r14
    rho[3, 0] = r14.conjugate()
    rho[1, 2] = r23
    rho[2, 1] = r23.conjugate()
    return rho


def amplitude_damping_product_channel(rho0, q):
    """Exact two-qubit state after each qubit decays through its own bath.

    For a single excitation coupled to one zero-temperature reservoir the
    exact reduced channel is amplitude damping with surviving amplitude q:
    Kraus E0 = diag(q, 1), E1 = sqrt(1-|q|^2) |0><1| (per qubit, basis
    (excited, ground)).  Independent oracle for the closed-form
    concurrence of atoms in independent reservoirs.
    """
    u = 1.0 - abs(q) ** 2
    E0 = np.array([[q, 0.0], [0.0, 1.0]], dtype=complex)
    E1 = np.array([[0.0, 0.0], [np.sqrt(u), 0.0]], dtype=complex)
    out = np.zeros((4, 4), dtype=complex)
    for Ea in (E0, E1):
        for Eb in (E0, E1):
            K = np.kron(Ea, Eb)
            out += K @ rho0 @ K.conj().T
    return out
