"""Propagators and reduced dynamical solvers.

Four complementary routes to the same physics, kept deliberately
independent so they can cross-validate each other:

* :func:`propagate_krylov` — numerically exact short-iterate Lanczos
  propagation of the full atom-field state in one excitation sector.
* :func:`evolve_tcl2` / :func:`evolve_lindblad` — time-local master
  equations for the reduced atomic density matrix with time-dependent
  (windowed) or constant (Markov) collective rates.
* :func:`solve_two_atom_amplitudes` / :func:`solve_decay_amplitude` —
  memory-kernel (Volterra) integro-differential equations for the
  single-excitation amplitudes, second-order product integration.
* :func:`bound_states` — atom-photon bound states from the secular
  equation, evaluated in band-edge offset coordinates so the residuals
  stay at rounding level even for barely-bound roots.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .kernels import rate_table
from .model import derive_params

# ---------------------------------------------------------------------------
# exact propagation (Lanczos / Krylov)
# ---------------------------------------------------------------------------


@dataclass
class StateTrajectory:
    """Pure-state history: frames[i] is the state at times[i].  ``vacuum``
    carries the stationary zero-excitation amplitude when one was given."""

    times: np.ndarray
    frames: np.ndarray
    basis: object
    vacuum: np.ndarray = None


def _check_hermitian(m):
    if sp.issparse(m):
        d = m - m.getH()
        dev = np.max(np.abs(d.data)) if d.nnz else 0.0
        scale = np.max(np.abs(m.data)) if m.nnz else 1.0
    else:
        dev = np.max(np.abs(m - np.conj(m.T)))
        scale = max(1.0, np.max(np.abs(m)))
    if dev > 1e-12 * max(1.0, scale):
        raise ValueError(f"Hamiltonian is not Hermitian "
                         f"(max deviation {dev:.3e})")


def _grid_indices(t_grid, dt):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ValueError("t_grid must be ascending and non-negative")
    idx = np.round(t_grid / dt).astype(int)
    if np.max(np.abs(t_grid - idx * dt)) > 1e-9 * max(1.0, t_grid[-1]):
        raise ValueError(
            f"t_grid must lie on the integrator lattice of step dt={dt}")
    return t_grid, idx


def _lanczos_step(matvec, psi, dt, shift, m_max, tol):
    """One step of e^{-i (H - shift) dt} psi by Lanczos with an adaptive
    subspace size (checked every other vector against the previous
    estimate)."""
    beta0 = np.linalg.norm(psi)
    if beta0 == 0.0:
        return psi
    V = np.empty((m_max, psi.size), dtype=complex)
    alphas = np.empty(m_max)
    betas = np.empty(m_max)
    V[0] = psi / beta0
    prev = None
    y_prev = None
    m_used = m_max
    for j in range(m_max):
        w = matvec(V[j]) - shift * V[j]
        if j > 0:
            w -= betas[j - 1] * V[j - 1]
        a = np.real(np.vdot(V[j], w))
        alphas[j] = a
        w -= a * V[j]
        b = np.linalg.norm(w)
        betas[j] = b
        if b < 1e-13 * (abs(a) + 1.0):
            m_used = j + 1
            break
        if j + 1 < m_max:
            V[j + 1] = w / b
        # convergence check on the propagated coefficients
        if j >= 3 and (j % 2 == 1 or j == m_max - 1):
            evals, evecs = eigh_tridiagonal(alphas[:j + 1], betas[:j])
            y = evecs @ (np.exp(-1j * evals * dt) * evecs[0, :].conj())
            if prev is not None:
                diff = np.linalg.norm(y[:prev.size] - prev) + abs(
                    np.linalg.norm(y) - 1.0)
                if diff < tol:
                    m_used = j + 1
                    y_prev = y
                    break
            prev = y
            y_prev = y
    m = m_used
    if y_prev is None or y_prev.size != m:
        evals, evecs = eigh_tridiagonal(alphas[:m], betas[:m - 1])
        y_prev = evecs @ (np.exp(-1j * evals * dt) * evecs[0, :].conj())
    out = (V[:m].T @ y_prev) * (beta0 * np.exp(-1j * shift * dt))
    return out


def propagate_krylov(H, psi0, t_grid, dt=0.01, krylov_dim=15, tol=1e-12,
                     vacuum_amplitude=None):
    """Propagate psi0 under the (Hermitian) sector Hamiltonian.

    Walks the time axis in uniform steps of ``dt`` (every requested output
    time must sit on that lattice) applying e^{-iH dt} in an adaptive
    Krylov subspace of at most ``krylov_dim`` vectors; the Hamiltonian
    diagonal mean is shifted out analytically and its phase restored
    exactly, so energies far from zero cost no accuracy.  The
    zero-excitation amplitude is decoupled from the single-excitation
    block and is carried along unchanged when ``vacuum_amplitude`` is
    given.
    """
    m = H.matrix
    _check_hermitian(m)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (m.shape[0],):
        raise ValueError(f"psi0 has length {psi0.size}, expected {m.shape[0]}")
    t_grid, idx = _grid_indices(t_grid, dt)
    if sp.issparse(m):
        diag = m.diagonal()
        matvec = m.dot
    else:
        diag = np.diag(m)
        matvec = lambda v: m @ v
    shift = float(np.mean(diag.real))
    m_max = min(krylov_dim, m.shape[0])

    frames = np.empty((len(t_grid), psi0.size), dtype=complex)
    psi = psi0.copy()
    pos = 0
    step = 0
    last = idx[-1]
    while True:
        while pos < len(idx) and idx[pos] == step:
            frames[pos] = psi
            pos += 1
        if step >= last:
            break
        psi = _lanczos_step(matvec, psi, dt, shift, m_max, tol)
        step += 1
    vac = None
    if vacuum_amplitude is not None:
        vac = np.full(len(t_grid), vacuum_amplitude, dtype=complex)
    return StateTrajectory(times=t_grid, frames=frames, basis=H.basis,
                           vacuum=vac)


# ---------------------------------------------------------------------------
# reduced master equations (time-local)
# ---------------------------------------------------------------------------


@dataclass
class DensityTrajectory:
    """Reduced atomic density-matrix history with positivity monitor."""

    times: np.ndarray
    frames: np.ndarray
    params: object
    min_eigenvalue: float = None


def _check_rho0(rho0, n_atoms):
    rho0 = np.asarray(rho0, dtype=complex)
    d = 2 ** n_atoms
    if rho0.shape != (d, d):
        raise ValueError(f"rho0 must be {d}x{d} for {n_atoms} atom(s), "
                         f"got {rho0.shape}")
    if np.max(np.abs(rho0 - rho0.conj().T)) > 1e-10:
        raise ValueError("rho0 is not Hermitian")
    if abs(np.trace(rho0).real - 1.0) > 1e-8:
        raise ValueError(f"rho0 has trace {np.trace(rho0).real!r}, expected 1")
    if np.min(np.linalg.eigvalsh(rho0)) < -1e-10:
        raise ValueError("rho0 has a negative eigenvalue")
    return rho0


def _atom_operators(n_atoms):
    """sigma_minus for each atom in the product basis (excited bit first)."""
    sm = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    ops = []
    for j in range(n_atoms):
        op = np.array([[1.0]], dtype=complex)
        for k in range(n_atoms):
            op = np.kron(op, sm if k == j else eye)
        ops.append(op)
    return ops


def _excitation_counts(n_atoms):
    d = 2 ** n_atoms
    return np.array([n_atoms - bin(i).count("1") for i in range(d)])


def _lind_generator(rho, G, g2, sig_m, sig_pm):
    """Interaction-picture time-local generator with rate matrix G.

    The atomic rotation at omega_S is removed exactly (the collective
    jump operators all carry the same transition frequency, so the
    dissipator and the level-shift Hamiltonian are unchanged by the
    rotation); the recorded frames are rotated back analytically.
    """
    n = len(sig_m)
    H_ls = np.zeros_like(rho)
    out = np.zeros_like(rho)
    for i in range(n):
        for j in range(n):
            gij = G[i, j]
            if gij == 0.0:
                continue
            H_ls += (g2 * gij.imag) * sig_pm[i][j]
            gr = g2 * gij.real
            if gr != 0.0:
                out += gr * (2.0 * (sig_m[j] @ rho @ sig_m[i].conj().T)
                             - sig_pm[i][j] @ rho - rho @ sig_pm[i][j])
    out += -1j * (H_ls @ rho - rho @ H_ls)
    return out


def _run_rk4(p, rho0, t_grid, dt, G_of_index):
    """Common RK4 driver; G_of_index(k) returns the rate matrix at time
    k*dt/2.  Aborts with RuntimeError when the trace drifts or the state
    stops being finite (the time-local equation has left its domain of
    validity)."""
    n = p.n_atoms
    rho0 = _check_rho0(rho0, n)
    t_grid, idx = _grid_indices(t_grid, dt)
    sig_m = _atom_operators(n)
    sig_pm = [[sig_m[i].conj().T @ sig_m[j] for j in range(n)]
              for i in range(n)]
    g2 = p.g_coupling ** 2
    n_exc = _excitation_counts(n)
    phase_exp = n_exc[:, None] - n_exc[None, :]

    frames = np.empty((len(t_grid), rho0.shape[0], rho0.shape[1]),
                      dtype=complex)
    min_eig = math.inf
    rho = rho0.copy()
    pos = 0
    step = 0
    last = idx[-1]
    while True:
        while pos < len(idx) and idx[pos] == step:
            t = step * dt
            lab = rho * np.exp(-1j * p.omega_S * t * phase_exp)
            frames[pos] = lab
            min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(lab))))
            pos += 1
        if step >= last:
            break
        k1 = _lind_generator(rho, G_of_index(2 * step), g2, sig_m, sig_pm)
        k2 = _lind_generator(rho + 0.5 * dt * k1, G_of_index(2 * step + 1),
                             g2, sig_m, sig_pm)
        k3 = _lind_generator(rho + 0.5 * dt * k2, G_of_index(2 * step + 1),
                             g2, sig_m, sig_pm)
        k4 = _lind_generator(rho + dt * k3, G_of_index(2 * step + 2),
                             g2, sig_m, sig_pm)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        step += 1
        if not np.all(np.isfinite(rho)) or \
                abs(np.trace(rho).real - 1.0) > 1e-6:
            raise RuntimeError(
                f"time-local master equation aborted at t={step * dt:.4g}: "
                f"trace drifted beyond 1e-6 (the generator is too stiff or "
                f"outside its validity window)")
    return DensityTrajectory(times=t_grid, frames=frames, params=p,
                             min_eigenvalue=min_eig)


def evolve_tcl2(p, kernel, rho0, t_grid, dt=0.01, substep=None):
    """Second-order time-local master equation with windowed rates.

    The collective rates Gamma_ij(t) are precomputed on the half-step grid
    of the RK4 integrator by one cumulative Simpson pass over the kernel;
    coarsening is controlled by ``substep`` (default resolves the fastest
    band frequency with a wide margin, see
    :func:`crowqed.kernels.default_rate_substep`).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_steps = int(round(float(t_grid[-1]) / dt)) if len(t_grid) else 0
    table = rate_table(p, kernel, dt / 2.0, max(2 * n_steps, 1),
                       substep=substep)
    return _run_rk4(p, rho0, t_grid, dt, lambda k: table[k])


def evolve_lindblad(p, rates, rho0, t_grid, dt=0.01):
    """Constant-rate (Markov) master equation.

    The dissipative part of the rate matrix must be positive semidefinite
    (complete positivity of the semigroup); purely imaginary in-gap rates
    give unitary dynamics with a collective level shift.
    """
    gam = np.asarray(rates.Gamma).real
    if np.min(np.linalg.eigvalsh(0.5 * (gam + gam.T))) < -1e-10:
        raise ValueError(
            "dissipative rate matrix has a negative eigenvalue: the "
            "constant-rate master equation would not be completely positive")
    G = np.asarray(rates.Gamma)
    return _run_rk4(p, rho0, t_grid, dt, lambda k: G)


# ---------------------------------------------------------------------------
# memory-kernel (Volterra) amplitude equations
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _panel_moments(kernel_fn, dt, N):
    """Hat-function moments of the kernel over each step panel
    [(j-1)dt, j dt]: P_j weights the newer node, Q_j the older one.
    8-point Gauss-Legendre per panel (exact to rounding for the smooth
    kernels used here)."""
    j = np.arange(1, N + 1)
    t0 = (j - 1) * dt
    tau = t0[:, None] + (_GL_X[None, :] + 1.0) * 0.5 * dt
    K = np.asarray(kernel_fn(tau.ravel())).reshape(N, 8)
    wq = _GL_W[None, :] * 0.5 * dt
    rel = (_GL_X[None, :] + 1.0) * 0.5
    P = np.sum(K * wq * rel, axis=1)
    Q = np.sum(K * wq * (1.0 - rel), axis=1)
    return P, Q


def _volterra_unit(kernel_fn, N, dt):
    """Solve y' (t) = -Integral_0^t K(tau) y(t-tau) dtau, y(0)=1, on the
    uniform grid by product integration: y is piecewise linear, the
    convolution becomes exact moments of K against the hat functions, and
    the time step is an implicit trapezoid.  Second-order accurate."""
    if N == 0:
        return np.ones(1, dtype=complex)
    P, Q = _panel_moments(kernel_fn, dt, N)
    w = np.empty(N + 1, dtype=complex)
    w[0] = Q[0]
    if N > 1:
        w[1:N] = P[0:N - 1] + Q[1:N]
    w[N] = P[N - 1]
    wr = w[::-1].copy()
    y = np.empty(N + 1, dtype=complex)
    y[0] = 1.0
    I_prev = 0.0 + 0.0j
    denom = 1.0 / dt + 0.5 * w[0]
    for n in range(1, N + 1):
        tail = np.dot(y[0:n], wr[N - n:N])
        if n < N:
            # at step n the oldest node's true weight is P_n alone; the
            # combined weight w[n] also holds Q_{n+1}, which belongs to a
            # panel not yet inside the convolution window
            tail -= Q[n] * y[0]
        y_n = (y[n - 1] / dt - 0.5 * (tail + I_prev)) / denom
        y[n] = y_n
        I_prev = w[0] * y_n + tail
    return y


@dataclass
class VolterraResult:
    """Two-atom single-excitation amplitudes (laboratory frame)."""

    times: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    c1: np.ndarray
    c2: np.ndarray


def solve_decay_amplitude(p, kernel, ts, dt=0.005):
    """Excited-state amplitude q(t) of a single atom, in the frame rotating
    at omega_S (so q = 1 identically at zero coupling and q(0) = 1
    exactly).  |q|^2 is the excited population."""
    ts, idx = _grid_indices(ts, dt)
    N = int(idx[-1])
    g2 = p.g_coupling ** 2

    def kfn(tau):
        return (2.0 * math.pi * g2 * np.asarray(kernel.evaluate(0, tau))
                * np.exp(1j * p.omega_S * tau))

    y = _volterra_unit(kfn, N, dt)
    return y[idx]


def solve_two_atom_amplitudes(p, kernel, c_init, L, ts, dt=0.005):
    """Two-atom single-excitation amplitudes via two decoupled memory
    kernels.

    ``c_init = (c_plus(0), c_minus(0))`` are the symmetric/antisymmetric
    combination amplitudes, which evolve independently with kernels
    proportional to alpha_0 +/- alpha_L.  Returned amplitudes are in the
    laboratory frame; ``c1``/``c2`` are the site amplitudes
    (c1, c2) = ((c+ + c-), (c+ - c-))/sqrt(2).
    """
    cp0, cm0 = complex(c_init[0]), complex(c_init[1])
    norm = abs(cp0) ** 2 + abs(cm0) ** 2
    if norm > 1.0 + 1e-12:
        raise ValueError(
            f"initial amplitudes have squared norm {norm:.6g} > 1")
    ts, idx = _grid_indices(ts, dt)
    N = int(idx[-1])
    g2 = p.g_coupling ** 2

    def make_kfn(sign):
        def kfn(tau):
            a0 = np.asarray(kernel.evaluate(0, tau))
            aL = np.asarray(kernel.evaluate(L, tau))
            return (2.0 * math.pi * g2 * (a0 + sign * aL)
                    * np.exp(1j * p.omega_S * tau))
        return kfn

    lab = np.exp(-1j * p.omega_S * ts)
    if cp0 == 0.0:
        c_plus = np.zeros(len(ts), dtype=complex)
    else:
        c_plus = cp0 * _volterra_unit(make_kfn(+1.0), N, dt)[idx] * lab
    if cm0 == 0.0:
        c_minus = np.zeros(len(ts), dtype=complex)
    else:
        c_minus = cm0 * _volterra_unit(make_kfn(-1.0), N, dt)[idx] * lab
    inv = 1.0 / math.sqrt(2.0)
    return VolterraResult(times=ts, c_plus=c_plus, c_minus=c_minus,
                          c1=(c_plus + c_minus) * inv,
                          c2=(c_plus - c_minus) * inv)


# ---------------------------------------------------------------------------
# atom-photon bound states
# ---------------------------------------------------------------------------


@dataclass
class BoundStateResult:
    """Discrete atom-photon eigenstates outside the band.

    ``trapped_population`` is the sum of squared atomic weights: the
    time-averaged excited population retained at long times by an
    initially excited atom (per symmetry sector for two atoms).
    """

    energies: tuple
    branches: tuple
    sectors: tuple
    atomic_weights: tuple
    residuals: tuple
    photon_profiles: list
    k_grid: np.ndarray
    trapped_population: float


def _sector_weights(p, n_atoms, L):
    """Exact momentum-space coupling weights per sector.  The cosine
    argument is reduced modulo the ring before evaluation so weights that
    vanish by symmetry vanish exactly in floating point."""
    M = p.M
    q = np.arange(-M // 2 + 1, M // 2 + 1)
    k = 2.0 * math.pi * q / M
    if n_atoms == 1:
        return k, {"single": np.ones(M)}
    cos_kL = np.cos(2.0 * math.pi * (np.mod(q * L, M)) / M)
    return k, {"+": 1.0 + cos_kL, "-": 1.0 - cos_kL}


def _find_root(const, slope_sign, dist, weights, coupling):
    """Root of the monotone secular function in edge-offset coordinates,

        f(x) = const + s*x - s*coupling * sum_k w_k / (x + d_k),  x > 0,

    where s = -1 below the band and +1 above it, d_k >= 0 is each mode's
    distance to that edge, and only modes with nonzero weight enter (so
    symmetry-forbidden couplings produce no spurious edge divergence).
    Returns (x, residual) or None when f never crosses zero.
    """
    mask = weights != 0.0
    w = weights[mask]
    d = dist[mask]
    s = slope_sign

    def f(x):
        return const + s * x - s * coupling * float(np.sum(w / (x + d)))

    if np.all(d > 0.0):
        # no mode exactly at the edge: f(0+) is finite and a root exists
        # only when it sits on the opposite side of the slope direction
        f0 = const - s * coupling * float(np.sum(w / d))
        if s * f0 >= 0.0:
            return None
    lo = 1e-14
    if s * f(lo) >= 0.0:
        # the root is pinched between 0 and lo: pinned to the edge
        return None
    hi = max(1.0, 2.0 * abs(const))
    for _ in range(200):
        if s * f(hi) > 0.0:
            break
        hi *= 2.0
    else:
        return None
    x = brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    # Newton polish in the offset coordinate: the residual drops to the
    # evaluation rounding floor even for barely-detached roots
    for _ in range(3):
        s1 = float(np.sum(w / (x + d)))
        s2 = float(np.sum(w / (x + d) ** 2))
        fx = const + s * x - s * coupling * s1
        dfx = s * (1.0 + coupling * s2)
        step = fx / dfx
        if x - step <= 0.0:
            break
        x -= step
    return x, abs(f(x))


def bound_states(p, n_atoms=1, L=None):
    """Atom-photon bound states below and above the band.

    Solves the secular equation e - omega_S = (2 pi g^2 / M) *
    sum_k w_k / (e - omega_k) per symmetry sector (w_k = 1 for a single
    atom, 1 +/- cos(kL) for the symmetric/antisymmetric two-atom sector)
    with edge-offset coordinates and a Newton polish, then reports energy,
    atomic weight, momentum-space photon profile and secular residual for
    every root.  A sector whose coupling weights vanish identically (the
    antisymmetric sector at L = 0) has no equation and contributes
    nothing; a root pinned to the band edge closer than 1e-12 is dropped
    as physically absent in the infinite-ring limit.
    """
    if n_atoms == 2 and L is None:
        raise ValueError("two-atom bound states need the separation L")
    k, sector_w = _sector_weights(p, n_atoms, L)
    d = derive_params(p)
    omega_k = p.A + p.B * np.cos(k)
    coupling = 2.0 * math.pi * p.g_coupling ** 2 / p.M
    below_dist = omega_k - d.omega_c       # >= 0, zero at the lower edge
    above_dist = d.omega_c_tilde - omega_k  # >= 0, zero at the upper edge

    energies, branches, sectors, weights_out, residuals, profiles = \
        [], [], [], [], [], []
    for name, w in sector_w.items():
        if not np.any(w != 0.0):
            continue
        for above, dist, edge in ((False, below_dist, d.omega_c),
                                  (True, above_dist, d.omega_c_tilde)):
            slope = 1.0 if above else -1.0
            got = _find_root(edge - p.omega_S, slope, dist, w, coupling)
            if got is None:
                continue
            x, resid = got
            if x <= 1e-12:
                continue
            e_b = edge + x if above else edge - x
            mask = w != 0.0
            denom_masked = slope * (x + dist[mask])
            s2 = float(np.sum(w[mask] / (x + dist[mask]) ** 2))
            atomic_w = 1.0 / (1.0 + coupling * s2)
            prof = np.zeros(p.M, dtype=float)
            prof[mask] = (math.sqrt(coupling) * math.sqrt(atomic_w)
                          * np.sqrt(w[mask]) / denom_masked)
            energies.append(float(e_b))
            branches.append("above" if above else "below")
            sectors.append(name)
            weights_out.append(float(atomic_w))
            residuals.append(resid)
            profiles.append(prof)
    trapped = float(np.sum(np.asarray(weights_out) ** 2)) \
        if weights_out else 0.0
    return BoundStateResult(energies=tuple(energies),
                            branches=tuple(branches),
                            sectors=tuple(sectors),
                            atomic_weights=tuple(weights_out),
                            residuals=tuple(residuals),
                            photon_profiles=profiles,
                            k_grid=k,
                            trapped_population=trapped)
