"""Comparison metrics, relaxation-curve fitting, and parameter sweeps.

This module contains the tooling that sits on top of the solvers: a
time-averaged deviation metric for comparing two population records, a
damped-oscillation + slow-relaxation model with a robust multi-start
fitter, and a checkpointed two-atom sweep over (separation, detuning)
cells that pits the exact amplitude solver against the time-local master
equation.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import least_squares

from .dynamics import evolve_tcl2, solve_two_atom_amplitudes
from .kernels import closed_kernel, discrete_kernel
from .model import ModelParams, named_initial_state
from .observables import atomic_populations

__all__ = [
    "error_metric",
    "relaxation_model",
    "FitResult",
    "fit_relaxation",
    "SweepTable",
    "run_sweep",
    "write_sweep_table",
]


# ---------------------------------------------------------------------------
# error metric
# ---------------------------------------------------------------------------

def error_metric(t, a, b, T, steady_window=None, cumulative=False):
    """Time-averaged absolute deviation between two series on a common grid.

    Integrates |a - b| with the trapezoid rule from t=0 up to T and divides
    by the averaging time, so identical series give exactly 0 and series
    differing by 1 give 1.  The metric is symmetric in its two series and
    obeys the triangle inequality.

    If ``steady_window`` (a fraction w of T) is given, the averaging time is
    extended beyond T in steps of W = w*T for as long as the mean of |a - b|
    over the latest window still differs from the previous window's mean by
    more than 1% of max|a| — i.e. until the deviation has visibly settled —
    capped at the end of the grid.  With ``cumulative=True`` the running
    average is returned at every grid point instead of the final scalar.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (t.shape == a.shape == b.shape) or t.ndim != 1:
        raise ValueError("t, a, b must be 1-d arrays of equal length")
    if t[-1] < T:
        raise ValueError(f"grid ends at t={t[-1]!r}, before the averaging "
                         f"time T={T!r}")

    tol = 1e-12 * max(1.0, abs(float(t[-1])))
    diff = np.abs(a - b)

    # end of the averaging range: start at T, optionally extend
    t_eff = float(T)
    if steady_window is not None:
        window = float(steady_window) * float(T)
        if window <= 0:
            raise ValueError("steady_window must be positive")
        scale = float(np.max(np.abs(a)))
        thresh = 0.01 * max(scale, 1e-300)
        while t_eff < t[-1] - tol:
            cur = (t > t_eff - window - tol) & (t <= t_eff + tol)
            prev = (t > t_eff - 2 * window - tol) & (t <= t_eff - window + tol)
            if not cur.any() or not prev.any():
                break
            if abs(float(diff[cur].mean()) - float(diff[prev].mean())) <= thresh:
                break
            t_eff = min(t_eff + window, float(t[-1]))

    stop = int(np.searchsorted(t, t_eff + tol))  # points with t <= t_eff
    stop = max(stop, 2)
    t_used = float(t[stop - 1])

    if cumulative:
        cum = cumulative_trapezoid(diff[:stop], t[:stop], initial=0.0)
        out = np.zeros(stop, dtype=float)
        out[1:] = cum[1:] / t[1:stop]
        return out
    return float(np.trapezoid(diff[:stop], t[:stop])) / t_used


# ---------------------------------------------------------------------------
# relaxation model and fit
# ---------------------------------------------------------------------------

def relaxation_model(t, I, s1, s2, a, b, lambda1, lambda2):
    """Damped-oscillation relaxation curve

        F(t) = (I - s1) cos(a t^b) e^(-lambda1 t) + s2 (e^(-lambda2 t) - 1) + s1

    with F(0) = I exactly.  The first term carries the oscillatory decay of
    the initial transient toward the plateau s1; the second is a slow
    drift of depth s2 toward the long-time limit s1 - s2.
    """
    t = np.asarray(t, dtype=float)
    return ((I - s1) * np.cos(a * t ** b) * np.exp(-lambda1 * t)
            + s2 * (np.exp(-lambda2 * t) - 1.0) + s1)


@dataclass(frozen=True)
class FitResult:
    """Converged parameters of a relaxation-curve fit."""
    model: str
    converged: bool
    s1: float
    s2: float
    a: float
    b: float
    lambda1: float
    lambda2: float
    rmsd: float

    @property
    def P_ss(self):
        """Long-time limit of the fitted curve."""
        if self.model == "reduced":
            return self.s1
        return self.s1 - self.s2


def _fft_frequency_guess(t, y):
    """Dominant angular frequency of the detrended signal, via the FFT peak."""
    y = y - np.mean(y)
    n = len(t)
    dt = (t[-1] - t[0]) / (n - 1)
    spectrum = np.abs(np.fft.rfft(y))
    freqs = np.fft.rfftfreq(n, d=dt)
    if len(spectrum) < 3:
        return 1.0
    peak = 1 + int(np.argmax(spectrum[1:]))
    omega = 2.0 * np.pi * freqs[peak]
    return omega if omega > 0 else 1.0


def _theta_b(b):
    # inverse of b = 2*sigmoid(theta)
    x = min(max(b / 2.0, 1e-6), 1 - 1e-6)
    return float(np.log(x / (1.0 - x)))


def fit_relaxation(t, y, I, include_slow_term=True):
    """Fit the relaxation model to a population record.

    Runs a Levenberg-Marquardt least-squares fit from a small grid of
    starting points (decay-rate decades x two stretch exponents, with the
    oscillation frequency seeded from the FFT peak of the detrended data)
    and keeps the best.  Rates are parametrised as squares and the stretch
    exponent through a sigmoid, so lambda1, lambda2 >= 0 and 0 < b < 2 hold
    by construction.  With ``include_slow_term=False`` the slow drift is
    dropped (s2 = 0, lambda2 unused) and the plateau itself is the
    long-time limit.

    Returns a :class:`FitResult`; ``rmsd`` is the degrees-of-freedom
    corrected root-mean-square residual and ``P_ss`` the fitted long-time
    population.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-d arrays of equal length")
    if len(t) < 50:
        raise ValueError(f"need at least 50 samples to fit, got {len(t)}")

    n_par = 6 if include_slow_term else 4

    if include_slow_term:
        def unpack(th):
            s1, s2, a, tb, tl1, tl2 = th
            return s1, s2, a, 2.0 / (1.0 + np.exp(-tb)), tl1 ** 2, tl2 ** 2
    else:
        def unpack(th):
            s1, a, tb, tl1 = th
            return s1, 0.0, a, 2.0 / (1.0 + np.exp(-tb)), tl1 ** 2, 0.0

    def residual(th):
        s1, s2, a, b, l1, l2 = unpack(th)
        return relaxation_model(t, I, s1, s2, a, b, l1, l2) - y

    a0 = _fft_frequency_guess(t, y)
    s1_0 = float(y[-1])
    s2_0 = 0.05

    best = None
    best_cost = np.inf
    for lam_hat in np.logspace(-3, 0, 4):
        for b0 in (0.5, 1.0):
            tb0 = _theta_b(b0)
            tl1 = np.sqrt(lam_hat)
            tl2 = np.sqrt(10.0 * lam_hat)
            if include_slow_term:
                th0 = [s1_0, s2_0, a0, tb0, tl1, tl2]
            else:
                th0 = [s1_0, a0, tb0, tl1]
            try:
                res = least_squares(residual, th0, method="lm",
                                    ftol=1e-14, xtol=1e-14, gtol=1e-14,
                                    max_nfev=20000)
            except Exception:
                continue
            if res.cost < best_cost:
                best_cost = res.cost
                best = res
    if best is None:
        raise RuntimeError("relaxation fit failed from every starting point")

    s1, s2, a, b, l1, l2 = unpack(best.x)
    ssr = float(np.sum(best.fun ** 2))
    dof = max(len(t) - n_par, 1)
    return FitResult(
        model="full" if include_slow_term else "reduced",
        converged=bool(best.success),
        s1=float(s1), s2=float(s2), a=abs(float(a)), b=float(b),
        lambda1=float(l1), lambda2=float(l2),
        rmsd=float(np.sqrt(ssr / dof)),
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepTable:
    """Result grid of a (separation, detuning) sweep.

    ``values[iL, iD]`` is the error metric between the two solver legs for
    separation ``L_values[iL]`` and qubit frequency ``omega_S_values[iD]``;
    ``status[iL][iD]`` is "done" or "failed".
    """
    values: np.ndarray
    status: list
    L_values: list
    Delta_values: list
    omega_S_values: np.ndarray
    provenance: dict = field(default_factory=dict)


def _cell_params(model_cfg, sweep_cfg, L, delta):
    omega_s = float(model_cfg["A"]) - float(model_cfg["B"]) + float(delta)
    return ModelParams(
        A=float(model_cfg["A"]), B=float(model_cfg["B"]),
        g_coupling=float(model_cfg["g_coupling"]), M=int(model_cfg["M"]),
        h0=float(model_cfg.get("h0", 1.0)),
        omega_S=omega_s, atom_positions=(0, int(L)),
    )


def _make_kernel(name, params):
    if name == "closed-bessel":
        return closed_kernel(params)
    if name == "discrete-sum":
        return discrete_kernel(params)
    raise ValueError(f"unsupported sweep kernel {name!r}")


def _compute_cell(model_cfg, sweep_cfg, L, delta):
    """Error metric between the exact-amplitude and master-equation legs."""
    p = _cell_params(model_cfg, sweep_cfg, L, delta)
    kern = _make_kernel(sweep_cfg["kernel"], p)
    T = float(sweep_cfg["T"])
    dt = float(sweep_cfg["dt"])
    ts = np.linspace(0.0, T, int(round(T / dt)) + 1)

    psi = named_initial_state(sweep_cfg.get("initial_state", "psi2"), 2)
    c1, c2 = complex(psi[1]), complex(psi[2])
    c_init = ((c1 + c2) / np.sqrt(2.0), (c1 - c2) / np.sqrt(2.0))

    vres = solve_two_atom_amplitudes(p, kern, c_init, int(L), ts,
                                     dt=float(sweep_cfg["dt_volterra"]))

    rho0 = np.outer(psi, psi.conj())
    dtraj = evolve_tcl2(p, kern, rho0, ts, dt=dt)
    per_atom, total = atomic_populations(dtraj)

    observable = sweep_cfg.get("observable", "total")
    if observable == "total":
        exact = np.abs(vres.c_plus) ** 2 + np.abs(vres.c_minus) ** 2
        me = total
    elif observable == "atom1":
        exact = np.abs((vres.c_plus + vres.c_minus) / np.sqrt(2.0)) ** 2
        me = per_atom[:, 0]
    else:
        raise ValueError(f"unsupported sweep observable {observable!r}")

    return error_metric(ts, exact, me, T=T)


def _cell_worker(args):
    """Module-level worker so process pools can pickle the call."""
    i_l, i_d, model_cfg, sweep_cfg, L, delta = args
    try:
        value = _compute_cell(model_cfg, sweep_cfg, L, delta)
        return i_l, i_d, value, "done"
    except Exception:
        return i_l, i_d, float("nan"), "failed"


def _config_tag(config):
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def _read_checkpoint(path, tag):
    """Completed cells from a checkpoint file, keyed by (iL, iD)."""
    done = {}
    if not os.path.exists(path):
        return done
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# config: ") and line[len("# config: "):] != tag:
                    raise ValueError("checkpoint was written for a different "
                                     "sweep configuration")
                continue
            parts = line.split(",")
            if len(parts) != 4:
                continue
            i_l, i_d = int(parts[0]), int(parts[1])
            done[(i_l, i_d)] = (float(parts[2]), parts[3])
    return done


def run_sweep(config, workers=1, checkpoint=None, resume=False):
    """Run the solver-pair comparison over every (L, Delta) cell.

    Each cell builds a two-atom model at separation L and qubit frequency
    omega_S = lower band edge + Delta, propagates the named initial state
    with both the exact amplitude solver and the time-local master equation,
    and records the error metric between the two total-population records.
    A cell whose model is invalid (e.g. a separation too large for the ring)
    is marked "failed" and the sweep continues.

    ``checkpoint`` names a text file that receives one line per finished
    cell; with ``resume=True`` cells already present in it are not recomputed.
    ``workers`` > 1 distributes cells over a process pool; results are keyed
    by cell index, so tables are identical regardless of worker count.
    """
    model_cfg = dict(config["model"])
    sweep_cfg = dict(config["sweep"])
    solver_pair = sweep_cfg.get("solver_pair", "tcl2-vs-cpm")
    if solver_pair != "tcl2-vs-cpm":
        raise ValueError(f"unsupported solver_pair {solver_pair!r}")

    l_values = list(sweep_cfg["L_values"])
    d_values = list(sweep_cfg["Delta_values"])
    tag = _config_tag({"model": model_cfg, "sweep": sweep_cfg})

    done = {}
    if resume and checkpoint is not None:
        done = _read_checkpoint(checkpoint, tag)

    pending = [(i_l, i_d, model_cfg, sweep_cfg, L, delta)
               for i_l, L in enumerate(l_values)
               for i_d, delta in enumerate(d_values)
               if (i_l, i_d) not in done]

    ck = None
    if checkpoint is not None:
        mode = "a" if (resume and done) else "w"
        ck = open(checkpoint, mode, encoding="utf-8")
        if mode == "w":
            ck.write("# crowqed sweep checkpoint v1\n")
            ck.write(f"# config: {tag}\n")
            ck.write("# columns: iL,iD,value,status\n")
            ck.flush()

    def record(i_l, i_d, value, status):
        done[(i_l, i_d)] = (value, status)
        if ck is not None:
            ck.write(f"{i_l},{i_d},{value!r},{status}\n")
            ck.flush()

    try:
        if workers > 1 and pending:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for i_l, i_d, value, status in pool.map(_cell_worker, pending):
                    record(i_l, i_d, value, status)
        else:
            for args in pending:
                record(*_cell_worker(args))
    finally:
        if ck is not None:
            ck.close()

    values = np.full((len(l_values), len(d_values)), np.nan)
    status = [["failed"] * len(d_values) for _ in l_values]
    for (i_l, i_d), (value, st) in done.items():
        values[i_l, i_d] = value
        status[i_l][i_d] = st

    omega_s = (float(model_cfg["A"]) - float(model_cfg["B"])
               + np.asarray(d_values, dtype=float))
    return SweepTable(
        values=values, status=status,
        L_values=l_values, Delta_values=d_values,
        omega_S_values=omega_s,
        provenance={
            "solver_pair": solver_pair,
            "kernel": sweep_cfg["kernel"],
            "T": sweep_cfg["T"], "dt": sweep_cfg["dt"],
            "dt_volterra": sweep_cfg["dt_volterra"],
            "initial_state": sweep_cfg.get("initial_state", "psi2"),
            "model": model_cfg,
        },
    )


def write_sweep_table(table, path):
    """Write a sweep table as deterministic comma-separated text.

    Floats are written with ``repr`` so rereading reproduces them bit for
    bit and identical sweeps produce identical bytes.
    """
    lines = ["# crowqed sweep table",
             f"# provenance: {json.dumps(table.provenance, sort_keys=True, separators=(',', ':'))}",
             f"# L_values: {','.join(repr(float(v)) for v in table.L_values)}",
             f"# omega_S_values: {','.join(repr(float(v)) for v in table.omega_S_values)}",
             "# columns: L,Delta,omega_S,error,status"]
    for i_l, L in enumerate(table.L_values):
        for i_d, delta in enumerate(table.Delta_values):
            lines.append(f"{float(L)!r},{float(delta)!r},"
                         f"{float(table.omega_S_values[i_d])!r},"
                         f"{float(table.values[i_l, i_d])!r},"
                         f"{table.status[i_l][i_d]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
