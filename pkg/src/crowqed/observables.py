"""Observables: populations, atomic reductions, entanglement measures.

Atomic product-basis convention used throughout: per atom the excited
state comes first, so for N atoms the configuration index is
sum_j (1 - excited_j) * 2^(N-1-j) — index 0 is all-excited, index 2^N - 1
all-ground.  For two atoms the order is {|11>, |10>, |01>, |00>}.
"""

import math
from dataclasses import dataclass

import numpy as np

_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
_SYSY = np.kron(_SY, _SY)


def _config_index(n_atoms, excited_atom=None):
    """Index of the configuration with one given atom excited (or none)."""
    idx = 2 ** n_atoms - 1
    if excited_atom is not None:
        idx -= 2 ** (n_atoms - 1 - excited_atom)
    return idx


def atomic_populations(traj):
    """Per-atom excited populations and their sum along a trajectory.

    Accepts either a pure-state trajectory from the exact propagator
    (population = |amplitude|^2 on the atomic entries, which come first in
    the sector basis) or a density-matrix trajectory from the master
    equations (population = sum of diagonal weight on configurations with
    that atom excited).  Returns (P, P_tot) with P of shape
    (n_times, n_atoms).
    """
    frames = np.asarray(traj.frames)
    if frames.ndim == 2:
        n = traj.basis.n_atoms
        P = np.abs(frames[:, :n]) ** 2
    elif frames.ndim == 3:
        d = frames.shape[1]
        n = int(round(math.log2(d)))
        diag = np.einsum("tii->ti", frames).real
        P = np.empty((frames.shape[0], n))
        for j in range(n):
            mask = np.array([(a >> (n - 1 - j)) & 1 == 0 for a in range(d)])
            P[:, j] = diag[:, mask].sum(axis=1)
    else:
        raise ValueError("unrecognized trajectory frame shape")
    return P, P.sum(axis=1)


@dataclass
class ReducedState:
    """Reduced atomic density matrix in the 2^N product basis."""

    rho: np.ndarray
    n_atoms: int


def reduce_to_atoms(frame, basis, vacuum_amplitude=0.0):
    """Trace the field out of a single-excitation pure state.

    The atomic state lives on the N one-atom-excited configurations (with
    the field in vacuum) plus the all-ground configuration, which collects
    the photon weight incoherently and the vacuum amplitude coherently
    (photon states are orthogonal to the vacuum, so only the vacuum
    amplitude interferes with nothing — it shares the field vacuum with
    the excited-atom components and keeps its coherence to them).
    """
    frame = np.asarray(frame, dtype=complex)
    if frame.shape != (basis.dimension,):
        raise ValueError(f"frame has length {frame.size}, expected "
                         f"{basis.dimension}")
    n = basis.n_atoms
    d = 2 ** n
    rho = np.zeros((d, d), dtype=complex)
    c = frame[:n]
    photon_weight = float(np.sum(np.abs(frame[n:]) ** 2))
    v = complex(vacuum_amplitude)
    G = _config_index(n)
    idx = [_config_index(n, j) for j in range(n)]
    for a in range(n):
        for b in range(n):
            rho[idx[a], idx[b]] += c[a] * np.conj(c[b])
        rho[idx[a], G] += c[a] * np.conj(v)
        rho[G, idx[a]] += v * np.conj(c[a])
    rho[G, G] += photon_weight + abs(v) ** 2
    return ReducedState(rho=rho, n_atoms=n)


def _check_density(rho, dim=None):
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if dim is not None and rho.shape[0] != dim:
        raise ValueError(f"density matrix must be {dim}x{dim}, "
                         f"got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-8:
        raise ValueError(f"density matrix has trace {np.trace(rho).real!r}")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


def concurrence(rho):
    """Two-qubit concurrence C = max(0, l1 - l2 - l3 - l4), the li being
    the decreasing square roots of the eigenvalues of rho * spin-flipped
    rho.  Zero for separable states, one for maximally entangled ones."""
    rho = _check_density(rho, 4)
    rho_tilde = _SYSY @ rho.conj() @ _SYSY
    evals = np.linalg.eigvals(rho @ rho_tilde)
    lam = np.sqrt(np.clip(evals.real, 0.0, None))
    lam[::-1].sort()
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def concurrence_independent(rho0, q_series):
    """Concurrence of two atoms decaying into independent baths, directly
    from the single-atom amplitude q(t).

    Valid for X-shaped initial states (populations plus the |11><00| and
    |10><01| coherences — every initial state used by the reduced solvers
    is of this form); the X shape is preserved by the independent decay
    channel, and the concurrence has the closed form

        C(t) = 2 max(0, u|w| - sqrt(d' a'), |q^2 z| - sqrt(b' c')),

    with u = |q|^2, populations (a, b, c, d) on {|11>,|10>,|01>,|00>}
    evolving as a' = u^2 a, b' = u(b + (1-u)a), c' = u(c + (1-u)a),
    d' = 1 - a' - b' - c', and coherences w = <10|rho|01>, z = <11|rho|00>
    scaling as u*w and q^2 z.
    """
    rho0 = _check_density(rho0, 4)
    off_x = rho0.copy()
    for i in (0, 1, 2, 3):
        off_x[i, i] = 0.0
    off_x[1, 2] = off_x[2, 1] = 0.0
    off_x[0, 3] = off_x[3, 0] = 0.0
    if np.max(np.abs(off_x)) > 1e-10:
        raise ValueError("closed-form independent-bath concurrence needs an "
                         "X-shaped initial state (diagonal + antidiagonal)")
    a = rho0[0, 0].real
    b = rho0[1, 1].real
    c = rho0[2, 2].real
    w = rho0[1, 2]
    z = rho0[0, 3]
    q = np.asarray(q_series, dtype=complex)
    u = np.abs(q) ** 2
    a_t = u ** 2 * a
    b_t = u * (b + (1.0 - u) * a)
    c_t = u * (c + (1.0 - u) * a)
    d_t = 1.0 - a_t - b_t - c_t
    term1 = u * abs(w) - np.sqrt(np.clip(d_t * a_t, 0.0, None))
    term2 = np.abs(q ** 2 * z) - np.sqrt(np.clip(b_t * c_t, 0.0, None))
    return 2.0 * np.maximum(0.0, np.maximum(term1, term2))


def von_neumann_entropy(rho):
    """S = -tr(rho ln rho) (natural log)."""
    evals = np.linalg.eigvalsh(np.asarray(rho, dtype=complex))
    evals = evals[evals > 1e-15]
    return float(-np.sum(evals * np.log(evals)))


def entanglement_entropy(frame, basis, vacuum_amplitude=0.0):
    """Atom-field entanglement entropy of a pure single-excitation state:
    the von Neumann entropy of the reduced atomic state."""
    return von_neumann_entropy(
        reduce_to_atoms(frame, basis, vacuum_amplitude).rho)
