"""Volume-fraction identification from tail-end charging-voltage segments.

Differential evolution searches the (eps_plus, eps_minus) scale box; candidate
trajectories come from either the trained surrogate (fast, batched) or the
finite-volume solver (reference, one solve per candidate). The fitness mixes a
voltage error sampled in the time domain with a time error sampled in the
voltage domain.
"""

from __future__ import annotations

import json
import os
import time as _time
from dataclasses import dataclass

import numpy as np

from battwin.errors import BackendMismatch, NoOverlap
from battwin.optim import DEConfig, differential_evolution
from battwin.params import NOMINAL_CAPACITY_AH, ParameterSet
from battwin.pinn import PinnModel
from battwin.solver import CurrentProfile, solve_spm, terminal_voltage

# tail-segment length (s) ending at the upper-voltage crossing, per protocol
TAIL_LENGTHS = {"RPT-C/3": 3600.0, "cyc-0.5C": 2400.0, "cyc-1C-multistep": 1500.0}

SEARCH_BOX = (0.70, 1.00)

FITNESS_LAMBDA = 50.0
N_INTERP = 100


def protocol_profile(protocol: str,
                     capacity_ah: float = NOMINAL_CAPACITY_AH) -> CurrentProfile:
    """Charging current protocol for a tag; durations sized with slack so the
    voltage cutoff, not the profile, ends the charge."""
    if protocol == "RPT-C/3":
        return CurrentProfile.constant(capacity_ah / 3.0, 12000.0)
    if protocol == "cyc-0.5C":
        return CurrentProfile.constant(capacity_ah / 2.0, 8400.0)
    if protocol == "cyc-1C-multistep":
        # 1C to ~60% throughput, 0.8C to ~80%, then 0.6C
        i1 = capacity_ah
        return CurrentProfile((
            (0.60 * capacity_ah / i1 * 3600.0, i1),
            (0.20 * capacity_ah / (0.8 * i1) * 3600.0, 0.8 * i1),
            (2400.0, 0.6 * i1),
        ))
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass
class ChargingSegment:
    """Tail of a charging curve: the window used for identification."""

    protocol: str
    time: np.ndarray      # s, absolute from charge start, strictly increasing
    voltage: np.ndarray   # V
    current: np.ndarray   # A

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        if self.protocol not in TAIL_LENGTHS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if not (len(self.time) == len(self.voltage) == len(self.current)):
            raise ValueError("time/voltage/current lengths differ")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError("time stamps must be strictly increasing")
        span = self.time[-1] - self.time[0]
        if not np.isclose(span, TAIL_LENGTHS[self.protocol], rtol=0.05):
            raise ValueError(
                f"tail span {span:.0f}s does not match {self.protocol}")

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.time, self.current, self.voltage]),
                   delimiter=",", header="time_s,current_A,voltage_V",
                   comments="", fmt="%.9g")
        with open(str(path) + ".json", "w") as fh:
            json.dump({"protocol": self.protocol}, fh)

    @classmethod
    def from_csv(cls, path) -> "ChargingSegment":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        return cls(protocol=meta["protocol"], time=data[:, 0],
                   current=data[:, 1], voltage=data[:, 2])


@dataclass
class IdentifiedParameters:
    eps_plus_scale: float
    eps_minus_scale: float
    fitness: float
    n_evals: int
    backend: str    # "pinn" | "fvm"
    wall_s: float


@dataclass
class ResampledPair:
    """Common-grid samples in both domains for the two fitness terms."""

    time_grid: np.ndarray
    v_sim: np.ndarray
    v_exp: np.ndarray
    volt_grid: np.ndarray
    t_sim: np.ndarray
    t_exp: np.ndarray


def _monotone_voltage(t, v):
    # charging curves are monotone up to noise; enforce it for t(V) inversion
    v_mono = np.maximum.accumulate(v)
    keep = np.concatenate([[True], np.diff(v_mono) > 0])
    return v_mono[keep], t[keep]


def resample_common_grid(sim, exp, n: int = N_INTERP) -> ResampledPair:
    """sim/exp are (time, voltage) pairs; returns n-point common grids."""
    t_s, v_s = (np.asarray(a, dtype=float) for a in sim)
    t_e, v_e = (np.asarray(a, dtype=float) for a in exp)
    t_lo, t_hi = max(t_s[0], t_e[0]), min(t_s[-1], t_e[-1])
    if t_lo >= t_hi:
        raise NoOverlap("time ranges do not overlap")
    time_grid = np.linspace(t_lo, t_hi, n)
    vs_mono, ts_of_v = _monotone_voltage(t_s, v_s)
    ve_mono, te_of_v = _monotone_voltage(t_e, v_e)
    v_lo = max(vs_mono[0], ve_mono[0])
    v_hi = min(vs_mono[-1], ve_mono[-1])
    if v_lo >= v_hi:
        raise NoOverlap("voltage ranges do not overlap")
    volt_grid = np.linspace(v_lo, v_hi, n)
    return ResampledPair(
        time_grid=time_grid,
        v_sim=np.interp(time_grid, t_s, v_s),
        v_exp=np.interp(time_grid, t_e, v_e),
        volt_grid=volt_grid,
        t_sim=np.interp(volt_grid, vs_mono, ts_of_v),
        t_exp=np.interp(volt_grid, ve_mono, te_of_v),
    )


def fitness(sim, exp, lam: float = FITNESS_LAMBDA, delta_t: float = None,
            n: int = N_INTERP) -> float:
    """1000 x voltage RMSE + lam x endpoint-aligned time RMSE (Eq.-8 form).

    delta_t defaults to the difference between the final time stamps of the
    two trajectories (endpoint alignment).
    """
    pair = resample_common_grid(sim, exp, n)
    if delta_t is None:
        delta_t = float(np.asarray(exp[0], dtype=float)[-1]
                        - np.asarray(sim[0], dtype=float)[-1])
    v_term = float(np.sqrt(np.mean((pair.v_sim - pair.v_exp) ** 2)))
    t_term = float(np.sqrt(np.mean((pair.t_sim + delta_t - pair.t_exp) ** 2)))
    return 1000.0 * v_term + lam * t_term


class FvmBackend:
    """Reference forward model: one full finite-volume solve per candidate."""

    name = "fvm"

    def __init__(self, params: ParameterSet, *, n_shells: int = 50,
                 dt: float = 2.0, v_cutoff: float = 4.3):
        self.params = params
        self.n_shells = n_shells
        self.dt = dt
        self.v_cutoff = v_cutoff

    def check(self, segment: ChargingSegment) -> None:
        pass  # the FVM solves any protocol

    def simulate(self, segment: ChargingSegment, scales) -> tuple:
        """(time, voltage) of the candidate on the segment's time grid."""
        profile = protocol_profile(segment.protocol)
        run = solve_spm(self.params.with_scales(scales[0], scales[1]), profile,
                        n_shells=self.n_shells, dt=self.dt,
                        v_limits=(-np.inf, self.v_cutoff), store_fields=False)
        v = np.interp(segment.time, run.time, run.voltage)
        return segment.time, v

    def simulate_population(self, segment: ChargingSegment, pop) -> np.ndarray:
        out = np.full((len(pop), len(segment.time)), np.nan)
        for i, row in enumerate(pop):
            try:
                out[i] = self.simulate(segment, row)[1]
            except Exception:
                pass  # leave NaN; the candidate gets an infinite fitness
        return out


class PinnBackend:
    """Surrogate forward model: the whole population in one batched pass."""

    name = "pinn"

    def __init__(self, model: PinnModel, *, theta_clip: float = 0.0015):
        self.model = model
        self.theta_clip = theta_clip

    def check(self, segment: ChargingSegment) -> None:
        if self.model.protocol != segment.protocol:
            raise BackendMismatch(
                f"model trained for {self.model.protocol!r}, "
                f"segment is {segment.protocol!r}")

    # surrogate evaluation grid: tail voltage is smooth, so a ~100-point
    # uniform grid plus linear interpolation matches the dense grid to well
    # below fitness resolution while keeping the batched pass small
    eval_points = 101

    def simulate_population(self, segment: ChargingSegment, pop) -> np.ndarray:
        m = self.model
        pop = np.atleast_2d(np.asarray(pop, dtype=float))
        if len(segment.time) > self.eval_points:
            times = np.linspace(segment.time[0], segment.time[-1],
                                self.eval_points)
        else:
            times = segment.time
        cs_minus, cs_plus = m.surface_concentrations(pop, times)
        # clip into the stoichiometry guard band so implausible candidates get
        # a large finite fitness instead of an exception
        eps = self.theta_clip
        cs_minus = np.clip(cs_minus, eps * m.params.c_max_minus,
                           (1 - eps) * m.params.c_max_minus)
        cs_plus = np.clip(cs_plus, eps * m.params.c_max_plus,
                          (1 - eps) * m.params.c_max_plus)
        current = np.array([m.profile.current_at(t) for t in times])
        volts = np.empty_like(cs_minus)
        for i, (s_plus, s_minus) in enumerate(pop):
            p_i = m.params.with_scales(s_plus, s_minus)
            for cur in np.unique(current):
                sel = current == cur
                volts[i, sel] = terminal_voltage(
                    p_i, cs_plus[i, sel], cs_minus[i, sel], float(cur))
        if times is not segment.time:
            volts = np.vstack([np.interp(segment.time, times, v)
                               for v in volts])
        return volts

    def simulate(self, segment: ChargingSegment, scales) -> tuple:
        v = self.simulate_population(segment, np.asarray(scales)[None])[0]
        return segment.time, v


def identify(segment: ChargingSegment, backend, de: DEConfig = None,
             *, seed: int = 0, polish: bool = False) -> IdentifiedParameters:
    """DE over the scale box; returns the best member with timing metadata.

    polish=True follows DE with a Nelder-Mead refinement of the same fitness
    (the valley is shallow along eps_minus, so DE alone leaves ~1e-2 slack);
    the extra evaluations are added to n_evals.
    """
    backend.check(segment)
    if de is None:
        de = DEConfig(bounds=[list(SEARCH_BOX), list(SEARCH_BOX)],
                      pop_size=100, iterations=10, seed=seed)
    exp = (segment.time, segment.voltage)

    def batch_fitness(pop):
        volts = backend.simulate_population(segment, pop)
        out = np.empty(len(pop))
        for i, v in enumerate(volts):
            try:
                out[i] = (np.inf if not np.all(np.isfinite(v))
                          else fitness((segment.time, v), exp))
            except NoOverlap:
                out[i] = np.inf
        return out

    t0 = _time.perf_counter()
    res = differential_evolution(None, de, batch_fitness=batch_fitness)
    x, best, n_evals = np.asarray(res.x, dtype=float), res.fitness, res.n_evals
    if polish:
        from scipy.optimize import minimize

        lo = np.array([b[0] for b in de.bounds])
        hi = np.array([b[1] for b in de.bounds])

        def scalar(z):
            if np.any(z < lo) or np.any(z > hi):
                return np.inf
            return float(batch_fitness(np.asarray(z)[None])[0])

        nm = minimize(scalar, x, method="Nelder-Mead",
                      options=dict(xatol=1e-5, fatol=1e-9, maxfev=400))
        n_evals += int(nm.nfev)
        if np.isfinite(nm.fun) and nm.fun <= best:
            x, best = np.clip(nm.x, lo, hi), float(nm.fun)
    wall = _time.perf_counter() - t0
    return IdentifiedParameters(
        eps_plus_scale=float(x[0]), eps_minus_scale=float(x[1]),
        fitness=best, n_evals=n_evals, backend=backend.name,
        wall_s=wall)


LEDGER_HEADER = "cycle,eps_plus_scale,eps_minus_scale,fitness,backend,wall_s"


def append_to_ledger(path, cycle: int, idp: IdentifiedParameters) -> None:
    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write(LEDGER_HEADER + "\n")
        fh.write(f"{cycle},{idp.eps_plus_scale:.9g},{idp.eps_minus_scale:.9g},"
                 f"{idp.fitness:.9g},{idp.backend},{idp.wall_s:.4g}\n")


def extract_tail(protocol: str, time, voltage, current,
                 *, v_end: float = 4.2) -> ChargingSegment:
    """Cut the protocol's tail window ending at the v_end crossing (or the
    final sample if the curve never reaches v_end)."""
    time = np.asarray(time, dtype=float)
    voltage = np.asarray(voltage, dtype=float)
    current = np.asarray(current, dtype=float)
    above = np.nonzero(voltage >= v_end)[0]
    end = above[0] if len(above) else len(time) - 1
    t_end = time[end]
    start = np.searchsorted(time, t_end - TAIL_LENGTHS[protocol])
    sl = slice(start, end + 1)
    return ChargingSegment(protocol=protocol, time=time[sl],
                           voltage=voltage[sl], current=current[sl])
