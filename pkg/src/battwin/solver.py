"""Finite-volume single particle model solver.

Spherical solid diffusion in each electrode particle (conservative finite
volumes, backward-Euler time stepping) coupled to the algebraic terminal
voltage model (OCP difference plus Butler-Volmer overpotentials).

Sign conventions: I > 0 is charge. During charge the anode particle fills
(surface influx) and the cathode particle empties. The surface boundary
condition is D dc/dr|_R = -j, so j_minus < 0 and j_plus > 0 on charge.

Voltage at t = 0 is evaluated at zero current (state before the first step
is applied), so it equals the OCP difference at the initial stoichiometries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from battwin.errors import NonFiniteState, StoichiometryOutOfRange
from battwin.ocp import GRAPHITE_OCP, NCM811_OCP, scalar_evaluator
from battwin.params import ParameterSet, NOMINAL_CAPACITY_AH

THETA_MIN = 0.001
THETA_MAX = 0.999


@dataclass(frozen=True)
class RadialGrid:
    """Uniform cell-centered finite-volume grid on [0, R]."""

    n_shells: int
    R: float
    edges: np.ndarray    # shell boundaries, length n_shells + 1
    centers: np.ndarray
    volumes: np.ndarray  # shell volumes (m^3)

    @classmethod
    def uniform(cls, n_shells: int, R: float) -> "RadialGrid":
        edges = np.linspace(0.0, R, n_shells + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        volumes = 4.0 / 3.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
        return cls(n_shells, R, edges, centers, volumes)


@dataclass(frozen=True)
class CurrentProfile:
    """Piecewise-constant current protocol; steps are (duration_s, current_A)."""

    steps: tuple  # ((duration, current), ...)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("profile needs at least one step")
        for dur, _ in self.steps:
            if dur <= 0:
                raise ValueError("step durations must be positive")

    @classmethod
    def constant(cls, current: float, duration: float) -> "CurrentProfile":
        return cls(((float(duration), float(current)),))

    @property
    def total_duration(self) -> float:
        return sum(d for d, _ in self.steps)

    def current_at(self, t: float) -> float:
        """Current during the step containing time t (t = 0 maps to 0 A)."""
        if t <= 0.0:
            return 0.0
        acc = 0.0
        for dur, cur in self.steps:
            acc += dur
            if t <= acc + 1e-12:
                return cur
        return self.steps[-1][1]


@dataclass
class SimulationResult:
    """Concentration fields, surface states, and terminal voltage on a time grid."""

    time: np.ndarray          # s
    c_minus: np.ndarray       # (n_t, n_shells_minus), mol m^-3
    c_plus: np.ndarray
    c_surf_minus: np.ndarray  # (n_t,)
    c_surf_plus: np.ndarray
    eta_minus: np.ndarray     # V
    eta_plus: np.ndarray
    voltage: np.ndarray       # V
    current: np.ndarray       # A, current applied during the step ending at t
    termination: str          # "completed" | "voltage-limit"
    grid_minus: RadialGrid = None
    grid_plus: RadialGrid = None

    def to_csv(self, path) -> None:
        header = "time_s,voltage_V,c_surf_neg,c_surf_pos,eta_neg,eta_pos"
        data = np.column_stack([
            self.time, self.voltage, self.c_surf_minus, self.c_surf_plus,
            self.eta_minus, self.eta_plus,
        ])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")


def specific_surface_area(params: ParameterSet, electrode: str) -> float:
    """a_i = 3 eps_i / R_i (m^-1)."""
    if electrode in ("+", "plus"):
        return 3.0 * params.eps_plus / params.R_plus
    if electrode in ("-", "minus"):
        return 3.0 * params.eps_minus / params.R_minus
    raise ValueError(f"unknown electrode tag {electrode!r}")


def molar_flux(params: ParameterSet, electrode: str, current: float) -> float:
    """Surface molar flux j_i (mol m^-2 s^-1) entering D dc/dr|_R = -j_i.

    Magnitude |I| / (a_i L_i F N A); sign such that charge (I > 0) fills the
    anode (j_minus < 0) and empties the cathode (j_plus > 0).
    """
    a = specific_surface_area(params, electrode)
    if electrode in ("+", "plus"):
        L, s = params.L_plus, +1.0
    else:
        L, s = params.L_minus, -1.0
    area = params.N_parallel * params.A
    return s * current / (a * L * params.F * area)


def exchange_current_density(params: ParameterSet, electrode: str, c_surf):
    """i0 = k sqrt(c_e) sqrt(c_surf) sqrt(c_max - c_surf) (A m^-2).

    The rate coefficient k carries units A m^2.5 mol^-1.5 (the Faraday factor is
    absorbed into the rate constant);
    the tabulated values give realistic 0.1-1 A m^-2 exchange current densities
    only without an extra Faraday factor.
    """
    if electrode in ("+", "plus"):
        k, c_max = params.k_plus, params.c_max_plus
    else:
        k, c_max = params.k_minus, params.c_max_minus
    c_surf = np.asarray(c_surf, dtype=float)
    i0 = k * np.sqrt(params.c_e) * np.sqrt(c_surf) * np.sqrt(c_max - c_surf)
    return i0 if i0.ndim else float(i0)


def overpotential(params: ParameterSet, electrode: str, c_surf, current: float):
    """eta_i = (2RT/F) asinh(F j_i / (2 i0_i)) (V)."""
    j = molar_flux(params, electrode, current)
    i0 = exchange_current_density(params, electrode, c_surf)
    x = params.F * j / (2.0 * i0)
    return 2.0 * params.R_gas * params.T / params.F * np.arcsinh(x)


def terminal_voltage(params: ParameterSet, c_surf_plus, c_surf_minus, current: float):
    """V = U+(theta+) - U-(theta-) + eta+ - eta-. Accepts scalars or arrays."""
    theta_p = np.asarray(c_surf_plus, dtype=float) / params.c_max_plus
    theta_m = np.asarray(c_surf_minus, dtype=float) / params.c_max_minus
    for name, th in (("positive", theta_p), ("negative", theta_m)):
        if np.any(th <= THETA_MIN) or np.any(th >= THETA_MAX):
            raise StoichiometryOutOfRange(
                f"{name} electrode stoichiometry outside ({THETA_MIN}, {THETA_MAX})")
    u = NCM811_OCP(theta_p) - GRAPHITE_OCP(theta_m)
    if current != 0.0:
        u = (u + overpotential(params, "+", c_surf_plus, current)
               - overpotential(params, "-", c_surf_minus, current))
    return u if np.ndim(u) else float(u)


def _diffusion_bands(grid: RadialGrid, D: float, dt: float):
    """Banded (I - dt*M) for backward Euler on the FV diffusion operator."""
    n = grid.n_shells
    dr = grid.R / n
    face_coef = 4.0 * np.pi * grid.edges[1:-1] ** 2 * D / dr  # interior faces
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    # influx from the j+1 neighbour through face j+1/2
    for j in range(n):
        if j < n - 1:
            a = face_coef[j] / grid.volumes[j]
            upper[j + 1] += -dt * a
            diag[j] += dt * a
        if j > 0:
            b = face_coef[j - 1] / grid.volumes[j]
            lower[j - 1] += -dt * b
            diag[j] += dt * b
    diag += 1.0
    return lower, diag, upper


class _ElectrodeStepper:
    """Pre-assembled implicit stepper for one electrode particle.

    Backward Euler with a constant matrix: c_{k+1} = P c_k + (-j) f, where
    P = (I - dt M)^-1 is precomputed (50x50, so a dense inverse is cheap and
    the per-step cost drops to one matvec).
    """

    def __init__(self, params, electrode, grid, dt):
        self.grid = grid
        self.dt = dt
        if electrode == "+":
            self.D = params.D_plus
            self.c_max = params.c_max_plus
        else:
            self.D = params.D_minus
            self.c_max = params.c_max_minus
        self.electrode = electrode
        lower, diag, upper = _diffusion_bands(grid, self.D, dt)
        n = grid.n_shells
        A = np.diag(diag) + np.diag(upper[1:], 1) + np.diag(lower[:-1], -1)
        self.P = np.linalg.inv(A)
        self.dr = grid.R / n
        surf_area = 4.0 * np.pi * grid.R ** 2
        e = np.zeros(n)
        e[-1] = dt * surf_area / grid.volumes[-1]
        self.flux_vec = self.P @ e  # multiply by (-j) each step

    def c_surf(self, c, j_flux):
        # extrapolate cell center to the surface using the flux BC gradient
        return c[-1] + (-j_flux / self.D) * (self.dr / 2.0)


def solve_spm(
    params: ParameterSet,
    profile: CurrentProfile,
    *,
    n_shells: int = 50,
    dt: float = 1.0,
    v_limits=(3.0, 4.2),
    c0_minus=None,
    c0_plus=None,
    store_fields: bool = True,
) -> SimulationResult:
    """Integrate the SPM over a current profile with implicit time stepping.

    Stops early (termination "voltage-limit") when the terminal voltage leaves
    v_limits. Raises NonFiniteState if a concentration leaves (0, c_max) or
    becomes non-finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_shells < 10:
        raise ValueError("need at least 10 shells")
    grid_m = RadialGrid.uniform(n_shells, params.R_minus)
    grid_p = RadialGrid.uniform(n_shells, params.R_plus)
    em = _ElectrodeStepper(params, "-", grid_m, dt)
    ep = _ElectrodeStepper(params, "+", grid_p, dt)

    n_steps = int(round(profile.total_duration / dt))
    if n_steps < 1:
        raise ValueError("profile shorter than one time step")

    n = n_shells
    c_m = np.full(n, params.c_init_minus) if c0_minus is None else np.array(c0_minus, dtype=float)
    c_p = np.full(n, params.c_init_plus) if c0_plus is None else np.array(c0_plus, dtype=float)

    currents = np.array([profile.current_at((k + 0.5) * dt) for k in range(n_steps)])

    n_t = n_steps + 1
    time = np.arange(n_t) * dt
    c_surf_m = np.empty(n_t)
    c_surf_p = np.empty(n_t)
    eta_m = np.zeros(n_t)
    eta_p = np.zeros(n_t)
    voltage = np.empty(n_t)
    applied = np.zeros(n_t)
    if store_fields:
        cm_hist = np.empty((n_t, n))
        cp_hist = np.empty((n_t, n))
        cm_hist[0] = c_m
        cp_hist[0] = c_p
    c_surf_m[0] = c_m[-1]
    c_surf_p[0] = c_p[-1]
    terminal_voltage(params, c_surf_p[0], c_surf_m[0], 0.0)  # stoichiometry check

    # scalar fast paths for the hot loop
    u_minus = scalar_evaluator(GRAPHITE_OCP)
    u_plus = scalar_evaluator(NCM811_OCP)
    voltage[0] = (u_plus(c_surf_p[0] / params.c_max_plus)
                  - u_minus(c_surf_m[0] / params.c_max_minus))
    flux_coef_m = 1.0 / (specific_surface_area(params, "-") * params.L_minus
                         * params.F * params.N_parallel * params.A)
    flux_coef_p = 1.0 / (specific_surface_area(params, "+") * params.L_plus
                         * params.F * params.N_parallel * params.A)
    kin_m = params.k_minus * math.sqrt(params.c_e)
    kin_p = params.k_plus * math.sqrt(params.c_e)
    two_rt_f = 2.0 * params.R_gas * params.T / params.F
    c_max_m, c_max_p = params.c_max_minus, params.c_max_plus
    Pm, Pp = em.P, ep.P
    fm, fp = em.flux_vec, ep.flux_vec
    theta_lo_m, theta_hi_m = THETA_MIN * c_max_m, THETA_MAX * c_max_m
    theta_lo_p, theta_hi_p = THETA_MIN * c_max_p, THETA_MAX * c_max_p

    # propagate deviations from the initial state; for a uniform initial
    # condition the diffusion operator annihilates it exactly, which keeps the
    # zero-current solution bit-identical to the initial condition
    base_m, base_p = c_m, c_p
    rem_m = np.zeros(n) if np.all(base_m == base_m[0]) else Pm @ base_m - base_m
    rem_p = np.zeros(n) if np.all(base_p == base_p[0]) else Pp @ base_p - base_p
    d_m = np.zeros(n)
    d_p = np.zeros(n)

    v_min, v_max = v_limits
    termination = "completed"
    last = 0
    for k in range(n_steps):
        I = currents[k]
        j_m = -I * flux_coef_m
        j_p = I * flux_coef_p
        d_m = Pm @ d_m + rem_m + (-j_m) * fm
        d_p = Pp @ d_p + rem_p + (-j_p) * fp
        c_m = base_m + d_m
        c_p = base_p + d_p
        i = k + 1
        cs_m = c_m[-1] + (-j_m / em.D) * (em.dr / 2.0)
        cs_p = c_p[-1] + (-j_p / ep.D) * (ep.dr / 2.0)
        if not (theta_lo_m < cs_m < theta_hi_m and theta_lo_p < cs_p < theta_hi_p):
            if not (math.isfinite(cs_m) and math.isfinite(cs_p)):
                raise NonFiniteState("non-finite concentration; reduce dt or check parameters")
            raise StoichiometryOutOfRange(
                f"surface stoichiometry left the valid range at t={i * dt:.1f} s")
        c_surf_m[i] = cs_m
        c_surf_p[i] = cs_p
        applied[i] = I
        v = float(u_plus(cs_p / c_max_p)) - float(u_minus(cs_m / c_max_m))
        if I != 0.0:
            e_m = two_rt_f * math.asinh(
                params.F * j_m / (2.0 * kin_m * math.sqrt(cs_m * (c_max_m - cs_m))))
            e_p = two_rt_f * math.asinh(
                params.F * j_p / (2.0 * kin_p * math.sqrt(cs_p * (c_max_p - cs_p))))
            eta_m[i] = e_m
            eta_p[i] = e_p
            v += e_p - e_m
        voltage[i] = v
        if store_fields:
            cm_hist[i] = c_m
            cp_hist[i] = c_p
        last = i
        if v >= v_max or v <= v_min:
            termination = "voltage-limit"
            break
    else:
        # full-horizon bound check (cell interiors, not just the surface)
        if (c_m.min() <= 0.0 or c_m.max() >= c_max_m
                or c_p.min() <= 0.0 or c_p.max() >= c_max_p):
            raise NonFiniteState("concentration left (0, c_max); unphysical state")

    sl = slice(0, last + 1)
    return SimulationResult(
        time=time[sl],
        c_minus=cm_hist[sl] if store_fields else np.empty((0, n)),
        c_plus=cp_hist[sl] if store_fields else np.empty((0, n)),
        c_surf_minus=c_surf_m[sl],
        c_surf_plus=c_surf_p[sl],
        eta_minus=eta_m[sl],
        eta_plus=eta_p[sl],
        voltage=voltage[sl],
        current=applied[sl],
        termination=termination,
        grid_minus=grid_m,
        grid_plus=grid_p,
    )


def simulate_capacity(
    params: ParameterSet,
    c_rate: float = 1.0 / 3.0,
    v_limits=(3.0, 4.2),
    *,
    nominal_ah: float = NOMINAL_CAPACITY_AH,
    n_shells: int = 50,
    dt: float = 2.0,
) -> float:
    """CC charge to the upper limit, then CC discharge to the lower limit.

    Returns the discharged capacity in Ah (CV phases are not modeled).
    """
    current = c_rate * nominal_ah
    horizon = 1.5 * 3600.0 / c_rate  # generous CC window
    # cutoffs are direction specific: the discharged-state OCV sits below the
    # lower limit, so only the upper limit is active while charging
    charge = solve_spm(
        params, CurrentProfile.constant(current, horizon),
        n_shells=n_shells, dt=dt, v_limits=(-np.inf, v_limits[1]), store_fields=True,
    )
    c0_minus = charge.c_minus[-1]
    c0_plus = charge.c_plus[-1]
    v_start = terminal_voltage(
        params, charge.c_surf_plus[-1], charge.c_surf_minus[-1], 0.0)
    if v_start <= v_limits[0]:
        return 0.0
    discharge = solve_spm(
        params, CurrentProfile.constant(-current, horizon),
        n_shells=n_shells, dt=dt, v_limits=v_limits,
        c0_minus=c0_minus, c0_plus=c0_plus, store_fields=False,
    )
    return current * discharge.time[-1] / 3600.0


def total_lithium(result: SimulationResult, electrode: str) -> np.ndarray:
    """Moles of lithium in one particle over time (conservation diagnostics)."""
    if electrode in ("-", "minus"):
        return result.c_minus @ result.grid_minus.volumes
    return result.c_plus @ result.grid_plus.volumes
