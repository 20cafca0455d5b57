"""Command-line interface: simulate / sweep / fit / boundstate.

All subcommands read a YAML config, run the requested computation, and
write deterministic comma-separated text (repr floats, resolved-config
header, no timestamps), so identical configs always produce identical
bytes.  Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from .analysis import fit_relaxation, run_sweep, write_sweep_table
from .dynamics import (
    bound_states,
    evolve_lindblad,
    evolve_tcl2,
    propagate_krylov,
    solve_decay_amplitude,
    solve_two_atom_amplitudes,
)
from .kernels import (
    closed_kernel,
    discrete_kernel,
    lorentzian_kernel,
    markov_rates,
)
from .model import (
    ModelParams,
    build_basis,
    build_hamiltonian,
    named_initial_state,
)
from .observables import concurrence, reduce_to_atoms, von_neumann_entropy

__all__ = ["main", "named_initial_state"]

SOLVERS = ("ed", "truncated-ed", "tcl2", "lindblad", "dicke-ed", "cpm", "qt")
KERNELS = ("closed-bessel", "discrete-sum", "lorentzian")


class ConfigError(Exception):
    """Anything wrong with the run configuration (as opposed to a numerical
    failure during the run)."""


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return cfg, raw


def _key_location(raw, path, key):
    """'line N of <path>' for the first line that sets ``key``, if any."""
    for lineno, text in enumerate(raw.splitlines(), start=1):
        if text.strip().startswith(f"{key}:"):
            return f"line {lineno} of {path}"
    return path


def _config_error(raw, path, key, message):
    raise ConfigError(f"{key}: {message} ({_key_location(raw, path, key)})")


def _build_params(model_cfg, raw, path):
    if not isinstance(model_cfg, dict):
        _config_error(raw, path, "model", "expected a mapping of model fields")
    try:
        return ModelParams(**model_cfg)
    except (TypeError, ValueError) as exc:
        _config_error(raw, path, "model", str(exc))


def _build_kernel(cfg, p, raw, path):
    name = cfg.get("kernel", "closed-bessel")
    if name not in KERNELS:
        _config_error(raw, path, "kernel",
                      f"unknown kernel {name!r}: choose from {', '.join(KERNELS)}")
    if name == "discrete-sum":
        return discrete_kernel(p)
    if name == "lorentzian":
        pars = cfg.get("kernel_params", {})
        try:
            return lorentzian_kernel(
                beta=float(pars["beta"]), gamma_w=float(pars["gamma_w"]),
                omega0=float(pars["omega0"]), t_d=float(pars.get("t_d", 0.0)))
        except (KeyError, ValueError) as exc:
            _config_error(raw, path, "kernel_params", str(exc))
    return closed_kernel(p)


# ---------------------------------------------------------------------------
# state handling helpers
# ---------------------------------------------------------------------------

def _config_indices(n_atoms):
    """Atomic-product-basis index of the configuration with atom j excited."""
    return [2 ** n_atoms - 1 - 2 ** (n_atoms - 1 - j) for j in range(n_atoms)]


def _single_excitation_amplitudes(psi, n_atoms, solver, raw, path):
    """Split a product-basis vector into single-excitation amplitudes plus a
    vacuum amplitude; reject states carrying more than one excitation."""
    idxs = _config_indices(n_atoms)
    keep = set(idxs) | {2 ** n_atoms - 1}
    stray = sum(abs(psi[a]) ** 2 for a in range(2 ** n_atoms) if a not in keep)
    if stray > 1e-12:
        _config_error(raw, path, "initial_state",
                      f"state is not usable with solver {solver!r}: it "
                      f"carries more than one excitation")
    amps = np.array([psi[a] for a in idxs], dtype=complex)
    return amps, complex(psi[-1])


def _rho_from_amplitudes(c_amps, vacuum_amp):
    """Reduced atomic density matrix of a single-excitation state whose
    emitted-photon weight has been traced out."""
    n = len(c_amps)
    dim = 2 ** n
    idxs = _config_indices(n)
    ground = dim - 1
    rho = np.zeros((dim, dim), dtype=complex)
    for a, ca in zip(idxs, c_amps):
        for b, cb in zip(idxs, c_amps):
            rho[a, b] = ca * np.conj(cb)
        rho[a, ground] = ca * np.conj(vacuum_amp)
        rho[ground, a] = np.conj(rho[a, ground])
    photon = 1.0 - float(np.sum(np.abs(c_amps) ** 2)) - abs(vacuum_amp) ** 2
    rho[ground, ground] = max(photon, 0.0) + abs(vacuum_amp) ** 2
    return rho


def _truncated_reduce(frame, basis):
    """Trace the oscillators out of a truncated-sector state vector."""
    n = basis.n_atoms
    dim = 2 ** n
    rho = np.zeros((dim, dim), dtype=complex)
    groups = {}
    for i, (bits, osc) in enumerate(basis.labels):
        a = sum((1 - b) * 2 ** (n - 1 - j) for j, b in enumerate(bits))
        groups.setdefault(osc, []).append((a, frame[i]))
    for entries in groups.values():
        for a, ca in entries:
            for b, cb in entries:
                rho[a, b] += ca * np.conj(cb)
    return rho


# ---------------------------------------------------------------------------
# solver backends for cmd_simulate
# ---------------------------------------------------------------------------

def _simulate_krylov(cfg, p, psi, ts, dt, solver, raw, path):
    sector = {"ed": "single-excitation", "dicke-ed": "dicke-single"}[solver]
    amps, vac = _single_excitation_amplitudes(psi, p.n_atoms, solver, raw, path)
    basis = build_basis(p, sector)
    H = build_hamiltonian(p, basis, t_horizon=float(ts[-1]))
    psi0 = np.zeros(basis.dimension, dtype=complex)
    psi0[:p.n_atoms] = amps
    traj = propagate_krylov(H, psi0, ts, dt=dt, vacuum_amplitude=vac)
    P = np.abs(traj.frames[:, :p.n_atoms]) ** 2
    vac_prob = np.abs(traj.vacuum) ** 2

    def rho_at(i):
        return reduce_to_atoms(traj.frames[i], basis,
                               vacuum_amplitude=traj.vacuum[i]).rho

    return P, vac_prob, rho_at


def _simulate_truncated(cfg, p, psi, ts, dt, raw, path):
    n = p.n_atoms
    counts = [bin(a).count("1") for a in range(2 ** n)]
    exc = [n - counts[a] for a in range(2 ** n)]
    support = [a for a in range(2 ** n) if abs(psi[a]) > 1e-12]
    n_e = int(cfg.get("N_e", max(exc[a] for a in support) if support else 1))
    n_max = cfg.get("n_max")
    basis = build_basis(p, "truncated-fock", N_e=n_e,
                        n_max=None if n_max is None else int(n_max))
    psi0 = np.zeros(basis.dimension, dtype=complex)
    for a in support:
        bits = tuple(1 - ((a >> (n - 1 - j)) & 1) for j in range(n))
        psi0[basis.label_to_index((bits, ()))] = psi[a]
    H = build_hamiltonian(p, basis, t_horizon=float(ts[-1]))
    traj = propagate_krylov(H, psi0, ts, dt=dt)

    masks = np.array([[bits[j] for j in range(n)]
                      for bits, _ in basis.labels], dtype=float)
    P = (np.abs(traj.frames) ** 2) @ masks
    vac_idx = basis.label_to_index(((0,) * n, ()))
    vac_prob = np.abs(traj.frames[:, vac_idx]) ** 2

    def rho_at(i):
        return _truncated_reduce(traj.frames[i], basis)

    return P, vac_prob, rho_at


def _simulate_master(cfg, p, psi, ts, dt, solver, raw, path):
    rho0 = np.outer(psi, psi.conj())
    if solver == "tcl2":
        kern = _build_kernel(cfg, p, raw, path)
        traj = evolve_tcl2(p, kern, rho0, ts, dt=dt)
    else:
        rates = markov_rates(p, mode=cfg.get("rates", "analytic"))
        traj = evolve_lindblad(p, rates, rho0, ts, dt=dt)
    n = p.n_atoms
    diag = np.einsum("tii->ti", traj.frames).real
    excited = np.array([[1 - ((a >> (n - 1 - j)) & 1) for j in range(n)]
                        for a in range(2 ** n)], dtype=float)
    P = diag @ excited
    vac_prob = diag[:, -1].copy()

    def rho_at(i):
        return traj.frames[i]

    return P, vac_prob, rho_at


def _simulate_cpm(cfg, p, psi, ts, dt, raw, path):
    if p.n_atoms != 2:
        _config_error(raw, path, "solver",
                      "'cpm' is a two-atom solver; the model has "
                      f"{p.n_atoms} atom(s)")
    amps, vac = _single_excitation_amplitudes(psi, 2, "cpm", raw, path)
    kern = _build_kernel(cfg, p, raw, path)
    L = abs(p.atom_positions[1] - p.atom_positions[0])
    c_init = ((amps[0] + amps[1]) / np.sqrt(2.0),
              (amps[0] - amps[1]) / np.sqrt(2.0))
    dtv = float(cfg.get("dt_volterra", dt))
    res = solve_two_atom_amplitudes(p, kern, c_init, L, ts, dt=dtv)
    P = np.stack([np.abs(res.c1) ** 2, np.abs(res.c2) ** 2], axis=1)
    vac_prob = np.full(len(ts), abs(vac) ** 2)

    def rho_at(i):
        return _rho_from_amplitudes([res.c1[i], res.c2[i]], vac)

    return P, vac_prob, rho_at


def _simulate_qt(cfg, p, psi, ts, dt, raw, path):
    if p.n_atoms != 1:
        _config_error(raw, path, "solver",
                      "'qt' is a single-atom solver; the model has "
                      f"{p.n_atoms} atom(s)")
    amps, vac = _single_excitation_amplitudes(psi, 1, "qt", raw, path)
    kern = _build_kernel(cfg, p, raw, path)
    dtv = float(cfg.get("dt_volterra", dt))
    q = amps[0] * solve_decay_amplitude(p, kern, ts, dt=dtv)
    P = (np.abs(q) ** 2)[:, None]
    vac_prob = np.full(len(ts), abs(vac) ** 2)

    def rho_at(i):
        return _rho_from_amplitudes([q[i]], vac)

    return P, vac_prob, rho_at


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _write_rows(out_path, header_lines, names, columns):
    lines = list(header_lines)
    lines.append("# columns: " + ",".join(names))
    rows = len(columns[0])
    for i in range(rows):
        lines.append(",".join(_cell(col[i]) for col in columns))
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _cell(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return repr(float(value))


def _resolved_header(command, cfg, extra=None):
    lines = [f"# crowqed {command}"]
    for key in sorted(cfg):
        if key in ("output",):
            continue
        value = cfg[key]
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True, separators=(",", ":"))
        lines.append(f"# {key}: {value}")
    if extra:
        lines.extend(extra)
    return lines


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg, raw = _load_config(args.config)
    path = args.config
    p = _build_params(cfg.get("model"), raw, path)

    solver = cfg.get("solver")
    if solver not in SOLVERS:
        _config_error(raw, path, "solver",
                      f"unknown solver {solver!r}: choose from "
                      f"{', '.join(SOLVERS)}")

    state_name = cfg.get("initial_state")
    if state_name is None:
        _config_error(raw, path, "initial_state", "missing")
    try:
        psi = named_initial_state(str(state_name), p.n_atoms)
    except ValueError as exc:
        _config_error(raw, path, "initial_state", str(exc))

    try:
        t_max = float(cfg["t_max"])
        dt = float(cfg.get("dt", 0.01))
    except (KeyError, TypeError, ValueError) as exc:
        _config_error(raw, path, "t_max", f"bad time grid: {exc}")
    if t_max <= 0 or dt <= 0:
        _config_error(raw, path, "t_max", "t_max and dt must be positive")
    ts = np.linspace(0.0, t_max, int(round(t_max / dt)) + 1)

    obs = {"populations": True, "vacuum": False,
           "concurrence": False, "entropy": False}
    obs.update(cfg.get("observables") or {})

    if solver in ("ed", "dicke-ed"):
        P, vac_prob, rho_at = _simulate_krylov(cfg, p, psi, ts, dt, solver,
                                               raw, path)
    elif solver == "truncated-ed":
        P, vac_prob, rho_at = _simulate_truncated(cfg, p, psi, ts, dt,
                                                  raw, path)
    elif solver in ("tcl2", "lindblad"):
        P, vac_prob, rho_at = _simulate_master(cfg, p, psi, ts, dt, solver,
                                               raw, path)
    elif solver == "cpm":
        P, vac_prob, rho_at = _simulate_cpm(cfg, p, psi, ts, dt, raw, path)
    else:
        P, vac_prob, rho_at = _simulate_qt(cfg, p, psi, ts, dt, raw, path)

    names = ["t"] + [f"P_{j + 1}" for j in range(p.n_atoms)] + ["P_tot"]
    columns = [ts] + [P[:, j] for j in range(p.n_atoms)] + [P.sum(axis=1)]
    if obs["vacuum"]:
        names.append("vacuum")
        columns.append(vac_prob)
    if obs["concurrence"]:
        if p.n_atoms != 2:
            _config_error(raw, path, "observables",
                          "concurrence requires exactly two atoms")
        names.append("concurrence")
        columns.append(np.array([concurrence(rho_at(i))
                                 for i in range(len(ts))]))
    if obs["entropy"]:
        names.append("entropy")
        columns.append(np.array([von_neumann_entropy(rho_at(i))
                                 for i in range(len(ts))]))

    out = args.output or cfg.get("output")
    if not out:
        _config_error(raw, path, "output", "missing output path")
    _write_rows(out, _resolved_header("simulate", cfg), names, columns)
    return 0


def cmd_boundstate(args):
    cfg, raw = _load_config(args.config)
    path = args.config
    p = _build_params(cfg.get("model"), raw, path)
    n_atoms = int(cfg.get("n_atoms", p.n_atoms))
    L = None
    if n_atoms == 2:
        if p.n_atoms != 2:
            _config_error(raw, path, "n_atoms",
                          "two-atom bound states need two atom positions")
        L = abs(p.atom_positions[1] - p.atom_positions[0])
    try:
        res = bound_states(p, n_atoms=n_atoms, L=L)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    names = ["sector", "branch", "energy", "atomic_weight",
             "trapped_weight", "residual"]
    trapped = [float(np.sum(prof ** 2)) for prof in res.photon_profiles]
    columns = [list(res.sectors), list(res.branches), list(res.energies),
               list(res.atomic_weights), trapped, list(res.residuals)]
    out = args.output or cfg.get("output")
    if not out:
        _config_error(raw, path, "output", "missing output path")
    extra = [f"# trapped_population: {res.trapped_population!r}"]
    _write_rows(out, _resolved_header("boundstate", cfg, extra),
                names, columns)
    return 0


def cmd_fit(args):
    cfg, raw = _load_config(args.config)
    path = args.config
    src = cfg.get("input")
    if not src:
        _config_error(raw, path, "input", "missing input path")
    try:
        with open(src, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read fit input {src}: {exc}") from exc
    col_lines = [ln for ln in text.splitlines()
                 if ln.startswith("# columns:")]
    if not col_lines:
        raise ConfigError(f"fit input {src} has no '# columns:' header")
    col_names = [c.strip() for c in col_lines[0].split(":", 1)[1].split(",")]
    wanted = cfg.get("column", "P_tot")
    if wanted not in col_names:
        _config_error(raw, path, "column",
                      f"column {wanted!r} not in {col_names}")
    data = np.loadtxt(src, comments="#", delimiter=",", ndmin=2)
    t = data[:, 0]
    y = data[:, col_names.index(wanted)]

    try:
        fit = fit_relaxation(t, y, I=float(cfg.get("I", y[0])),
                             include_slow_term=bool(
                                 cfg.get("include_slow_term", True)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    names = ["model", "converged", "s1", "s2", "a", "b",
             "lambda1", "lambda2", "P_ss", "rmsd"]
    columns = [[fit.model], [fit.converged], [fit.s1], [fit.s2], [fit.a],
               [fit.b], [fit.lambda1], [fit.lambda2], [fit.P_ss], [fit.rmsd]]
    out = args.output or cfg.get("output")
    if not out:
        _config_error(raw, path, "output", "missing output path")
    _write_rows(out, _resolved_header("fit", cfg), names, columns)
    return 0


def cmd_sweep(args):
    cfg, raw = _load_config(args.config)
    path = args.config
    for key in ("model", "sweep"):
        if not isinstance(cfg.get(key), dict):
            _config_error(raw, path, key, "missing or not a mapping")
    out = args.output or cfg.get("output")
    if not out:
        _config_error(raw, path, "output", "missing output path")
    try:
        table = run_sweep({"model": cfg["model"], "sweep": cfg["sweep"]},
                          workers=args.workers,
                          checkpoint=f"{out}.checkpoint",
                          resume=args.resume)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    write_sweep_table(table, out)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="crowqed",
        description="waveguide-QED solvers for atoms coupled to a "
                    "coupled-resonator array")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="propagate one configuration")
    sim.add_argument("--config", required=True)
    sim.add_argument("--output", default=None,
                     help="override the config's output path")
    sim.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="scan separations and detunings")
    swp.add_argument("--config", required=True)
    swp.add_argument("--output", default=None)
    swp.add_argument("--workers", type=int, default=1)
    swp.add_argument("--resume", action="store_true",
                     help="reuse cells already in the checkpoint file")
    swp.set_defaults(func=cmd_sweep)

    fit = sub.add_parser("fit", help="fit the relaxation model to a column "
                                     "of a simulate output file")
    fit.add_argument("--config", required=True)
    fit.add_argument("--output", default=None)
    fit.set_defaults(func=cmd_fit)

    bnd = sub.add_parser("boundstate", help="solve for atom-photon bound "
                                            "states")
    bnd.add_argument("--config", required=True)
    bnd.add_argument("--output", default=None)
    bnd.set_defaults(func=cmd_boundstate)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"crowqed: config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"crowqed: config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"crowqed: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
