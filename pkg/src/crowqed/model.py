"""Model definition for atoms coupled to a coupled-resonator waveguide.

The field is a ring of M coupled single-mode resonators with on-site
frequency A and nearest-neighbour hopping B/2, giving the cosine band
omega(k) = A + B*cos(k*h0) with band edges A - B and A + B.  N two-level
atoms of frequency omega_S sit on integer lattice sites and couple locally
to the resonator at their own site with strength sqrt(2*pi)*g; with that
normalization the site-correlation kernel used by the reduced solvers is
exactly 1 at zero delay (see :mod:`crowqed.kernels`).

Periodic boundary conditions are the default so that the exact propagator
and the momentum-sum kernels describe the same finite model; an open chain
is available as an option for boundary-effect studies.
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SECTORS = ("single-excitation", "truncated-fock", "dicke-single",
           "dicke-truncated")


@dataclass(frozen=True)
class ModelParams:
    """Static model parameters.

    A, B          band centre and half-width (omega(k) = A + B cos k h0)
    g_coupling    atom-field coupling scale
    M             number of resonators (even)
    h0            lattice constant
    atom_positions  integer sites, one per atom; duplicates allowed
    omega_S       atomic transition frequency
    """

    A: float
    B: float
    g_coupling: float
    M: int
    h0: float
    atom_positions: tuple
    omega_S: float

    def __post_init__(self):
        if self.M % 2 != 0 or self.M < 2:
            raise ValueError(f"M must be a positive even integer, got {self.M}")
        if self.B <= 0:
            raise ValueError(f"B must be positive, got {self.B}")
        if self.h0 <= 0:
            raise ValueError(f"h0 must be positive, got {self.h0}")
        positions = []
        for r in self.atom_positions:
            if r != int(r):
                raise ValueError(f"atom positions must be integer sites, got {r}")
            positions.append(int(r))
        object.__setattr__(self, "atom_positions", tuple(positions))
        half = self.M // 2
        for r in self.atom_positions:
            if not (-half < r <= half):
                raise ValueError(
                    f"atom position {r} outside the ring sites "
                    f"({-half + 1}..{half}) for M={self.M}")
            if abs(r) > self.M / 4:
                raise ValueError(
                    f"atom position {r} closer than M/4 sites to the ring "
                    f"ends for M={self.M}; keep |r| <= M/4 so finite-size "
                    f"wraparound does not reach the atoms first")

    @property
    def n_atoms(self):
        return len(self.atom_positions)


@dataclass(frozen=True)
class DerivedParams:
    """Derived band/atom scales.  See :func:`derive_params`."""

    omega_c: float
    omega_c_tilde: float
    Delta: float
    in_gap: bool
    xi: float
    xi_infinite: bool
    gamma0: float
    lambda_L: float
    A: float
    B: float
    h0: float

    def v_g(self, omega):
        """Exact group velocity B*h0*sin(k(omega)*h0) at frequency omega."""
        c = (omega - self.A) / self.B
        return self.B * self.h0 * math.sqrt(max(0.0, 1.0 - c * c))


def derive_params(p):
    """Band edges, detuning, localization length and emission scale.

    xi = h0*sqrt(B/(2|Delta|)) is the bound-state localization length below
    the edge (Delta < 0) and the spatial oscillation scale above it;
    gamma0 = 2*pi*xi/B is the band-edge emission rate scale and
    lambda_L = pi*xi the error-periodicity length of the all-atoms-at-one-
    site approximation.  Exactly at the edge (Delta = 0) xi diverges and is
    reported as inf with xi_infinite set.
    """
    omega_c = p.A - p.B
    omega_c_tilde = p.A + p.B
    Delta = p.omega_S - omega_c
    if Delta == 0.0:
        xi = math.inf
        xi_infinite = True
    else:
        xi = p.h0 * math.sqrt(p.B / (2.0 * abs(Delta)))
        xi_infinite = False
    gamma0 = 2.0 * math.pi * xi / p.B
    lambda_L = math.pi * xi
    return DerivedParams(omega_c=omega_c, omega_c_tilde=omega_c_tilde,
                         Delta=Delta, in_gap=Delta < 0.0, xi=xi,
                         xi_infinite=xi_infinite, gamma0=gamma0,
                         lambda_L=lambda_L, A=p.A, B=p.B, h0=p.h0)


def hilbert_dimension(n_atoms, n_osc, n_exc):
    """Exact dimension of the truncated space with at most n_exc excitations.

    Counts atomic bitstrings with i excited atoms times oscillator
    occupation patterns over n_osc modes holding up to n_exc - i photons.
    Exact integer arithmetic (no overflow for large arguments).
    """
    total = 0
    for i in range(0, min(n_atoms, n_exc) + 1):
        atomic = math.comb(n_atoms, i)
        photon = sum(math.comb(n_osc + m - 1, m)
                     for m in range(0, n_exc - i + 1))
        total += atomic * photon
    return total


@dataclass
class BasisIndex:
    """Contiguous index <-> label map for one sector.

    A label is ``(bits, osc)``: ``bits`` is the atomic bitstring
    (1 = excited), ``osc`` a tuple of ``(site, occupation)`` pairs sorted
    by site with occupation >= 1.  Sites run over the ring coordinates
    -M/2+1 .. M/2.
    """

    sector: str
    params: ModelParams
    labels: tuple
    N_e: int = None
    n_max: int = None
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self._index is None:
            self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def dimension(self):
        return len(self.labels)

    @property
    def n_atoms(self):
        return self.params.n_atoms

    def index_to_label(self, i):
        return self.labels[i]

    def label_to_index(self, label):
        return self._index[label]


def ring_sites(M):
    """Ring site coordinates -M/2+1 .. M/2 in ascending order."""
    return list(range(-M // 2 + 1, M // 2 + 1))


def _single_excitation_labels(p):
    N = p.n_atoms
    labels = []
    for j in range(N):
        bits = tuple(1 if i == j else 0 for i in range(N))
        labels.append((bits, ()))
    ground = tuple(0 for _ in range(N))
    for r in ring_sites(p.M):
        labels.append((ground, ((r, 1),)))
    return tuple(labels)


def _occupation_patterns(sites, budget, n_max):
    """All oscillator patterns with total occupation 0..budget, per-site
    occupation <= n_max, as sorted (site, occ) tuples."""
    patterns = [()]
    for total in range(1, budget + 1):
        for combo in itertools.combinations_with_replacement(sites, total):
            osc = []
            ok = True
            for site in sorted(set(combo)):
                n = combo.count(site)
                if n > n_max:
                    ok = False
                    break
                osc.append((site, n))
            if ok:
                patterns.append(tuple(osc))
    return patterns


def _truncated_labels(p, N_e, n_max):
    N = p.n_atoms
    sites = ring_sites(p.M)
    labels = []
    for bits in itertools.product((0, 1), repeat=N):
        n_at = sum(bits)
        if n_at > N_e:
            continue
        for osc in _occupation_patterns(sites, N_e - n_at, n_max):
            labels.append((bits, osc))
    labels.sort(key=lambda lab: (sum(lab[0]) + sum(n for _, n in lab[1]),
                                 lab[0], lab[1]))
    return tuple(labels)


def build_basis(p, sector, N_e=None, n_max=None, allow_truncation=True):
    """Enumerate the basis of one dynamical sector.

    single-excitation / dicke-single:
        N one-atom-excited states followed by M one-photon states
        (the zero-excitation vacuum is carried separately by the
        propagator as a stationary scalar amplitude).
    truncated-fock / dicke-truncated:
        all states with at most ``N_e`` total excitations and at most
        ``n_max`` photons per resonator (default ``n_max = N_e``).
        ``n_max < N_e`` discards hopping/coupling targets and is only a
        controlled approximation; it warns, or raises when
        ``allow_truncation=False``.

    The Dicke sectors use the same labels; the difference is in
    :func:`build_hamiltonian`, which couples every atom to site 0.
    """
    if sector not in SECTORS:
        raise ValueError(f"unknown sector {sector!r}; choose from {SECTORS}")
    if sector in ("single-excitation", "dicke-single"):
        return BasisIndex(sector=sector, params=p,
                          labels=_single_excitation_labels(p))
    if N_e is None:
        raise ValueError("truncated sectors require the excitation cutoff N_e")
    if n_max is None:
        n_max = N_e
    if n_max < N_e:
        msg = (f"per-resonator cutoff n_max={n_max} below the excitation "
               f"cutoff N_e={N_e}: multi-photon pile-up on one site is "
               f"discarded")
        if not allow_truncation:
            raise ValueError(msg + " (pass allow_truncation=True to accept)")
        warnings.warn(msg, UserWarning)
    return BasisIndex(sector=sector, params=p,
                      labels=_truncated_labels(p, N_e, n_max),
                      N_e=N_e, n_max=n_max)


_NAMED_TWO_ATOM = {
    "psi1": (1.0, 0.0, 0.0, 0.0),
    "psi2": (0.0, 1.0, 1.0, 0.0),
    "psi2tilde": (0.0, 1.0, -1.0, 0.0),
    "psi3": (1.0, 1.0, 1.0, 1.0),
}


def named_initial_state(name, n_atoms):
    """Atomic product-basis vector for a named state or an excitation
    bitstring.

    The basis orders each atom's excited state first, so for two atoms the
    components are on {|11>, |10>, |01>, |00>}.  Named states (psi1 both
    excited, psi2/psi2tilde the symmetric/antisymmetric single-excitation
    pair, psi3 the fully separable +x product) are two-atom states;
    bitstrings like "10" work for any atom count ('1' = excited).
    """
    if name in _NAMED_TWO_ATOM:
        if n_atoms != 2:
            raise ValueError(f"named state {name!r} is a two-atom state, "
                             f"got n_atoms={n_atoms}")
        v = np.array(_NAMED_TWO_ATOM[name], dtype=complex)
        return v / np.linalg.norm(v)
    if len(name) == n_atoms and set(name) <= {"0", "1"}:
        v = np.zeros(2 ** n_atoms, dtype=complex)
        idx = 0
        for ch in name:
            idx = 2 * idx + (0 if ch == "1" else 1)
        v[idx] = 1.0
        return v
    raise ValueError(f"unknown initial state {name!r}: expected psi1, psi2, "
                     f"psi2tilde, psi3 or a {n_atoms}-character bitstring")


@dataclass
class HamiltonianMatrix:
    """Sparse Hamiltonian with its basis and provenance."""

    matrix: object
    basis: BasisIndex
    sector: str
    params: ModelParams
    open_boundary: bool = False

    @property
    def dimension(self):
        return self.matrix.shape[0]


def _neighbours(r, M, open_boundary):
    half = M // 2
    out = []
    for step in (-1, 1):
        s = r + step
        if s > half:
            if open_boundary:
                continue
            s -= M
        elif s <= -half:
            if open_boundary:
                continue
            s += M
        out.append(s)
    return out


def _warn_if_bath_too_small(p, t_horizon):
    if t_horizon is None or p.g_coupling == 0.0:
        return
    reach = p.B * t_horizon * p.h0 + max(abs(r) for r in p.atom_positions)
    if reach > p.M / 2:
        warnings.warn(
            f"requested horizon t={t_horizon}: emitted wavepackets wrap "
            f"around the M={p.M} ring well before then (reach ~{reach:.0f} "
            f"sites > M/2); finite-size revivals will appear in the "
            f"dynamics", UserWarning)


def build_hamiltonian(p, basis, open_boundary=False, t_horizon=None):
    """Assemble the sector Hamiltonian as a sparse matrix.

    Terms: omega_S per excited atom; A per photon; photon hopping B/2
    between neighbouring resonators (periodic ring by default, open chain
    with ``open_boundary``); local atom-resonator exchange of strength
    sqrt(2*pi)*g*sqrt(n+1) at the atom's own site (site 0 for every atom in
    the Dicke sectors).  Passing ``t_horizon`` warns when the ring is too
    small for emitted wavepackets to stay clear of wraparound up to that
    time.
    """
    _warn_if_bath_too_small(p, t_horizon)
    dicke = basis.sector.startswith("dicke")
    couple_site = {j: (0 if dicke else r)
                   for j, r in enumerate(p.atom_positions)}
    gloc = math.sqrt(2.0 * math.pi) * p.g_coupling
    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    if basis.sector in ("single-excitation", "dicke-single"):
        N = p.n_atoms
        site_idx = {r: N + k for k, r in enumerate(ring_sites(p.M))}
        for j in range(N):
            add(j, j, p.omega_S)
            if p.g_coupling != 0.0:
                s = site_idx[couple_site[j]]
                add(j, s, gloc)
                add(s, j, gloc)
        for r in ring_sites(p.M):
            i = site_idx[r]
            add(i, i, p.A)
            for s in _neighbours(r, p.M, open_boundary):
                add(i, site_idx[s], p.B / 2.0)
    else:
        for i in range(basis.dimension):
            bits, osc = basis.index_to_label(i)
            occ = dict(osc)
            n_phot = sum(occ.values())
            add(i, i, p.omega_S * sum(bits) + p.A * n_phot)
            # photon hopping: move one photon r -> s
            for r, n in osc:
                for s in _neighbours(r, p.M, open_boundary):
                    new = dict(occ)
                    new[r] = n - 1
                    if new[r] == 0:
                        del new[r]
                    ns = new.get(s, 0)
                    if basis.n_max is not None and ns + 1 > basis.n_max:
                        continue
                    new[s] = ns + 1
                    target = (bits, tuple(sorted(new.items())))
                    j = basis.label_to_index(target)
                    add(i, j, (p.B / 2.0) * math.sqrt(n) * math.sqrt(ns + 1))
            if p.g_coupling == 0.0:
                continue
            # atom-field exchange at the coupling site
            for a in range(p.n_atoms):
                site = couple_site[a]
                if bits[a] == 1:
                    # emit: de-excite atom a, add photon at site
                    ns = occ.get(site, 0)
                    if basis.n_max is not None and ns + 1 > basis.n_max:
                        continue
                    new = dict(occ)
                    new[site] = ns + 1
                    nb = tuple(b if k != a else 0 for k, b in enumerate(bits))
                    target = (nb, tuple(sorted(new.items())))
                    j = basis.label_to_index(target)
                    add(i, j, gloc * math.sqrt(ns + 1))
                else:
                    # absorb: excite atom a, remove photon at site
                    ns = occ.get(site, 0)
                    if ns == 0:
                        continue
                    new = dict(occ)
                    new[site] = ns - 1
                    if new[site] == 0:
                        del new[site]
                    nb = tuple(b if k != a else 1 for k, b in enumerate(bits))
                    target = (nb, tuple(sorted(new.items())))
                    j = basis.label_to_index(target)
                    add(i, j, gloc * math.sqrt(ns))

    m = sp.coo_matrix((np.asarray(vals, dtype=np.complex128),
                       (rows, cols)),
                      shape=(basis.dimension, basis.dimension)).tocsr()
    return HamiltonianMatrix(matrix=m, basis=basis, sector=basis.sector,
                             params=p, open_boundary=open_boundary)
