"""Parameterized physics-informed surrogate of the SPM solid-diffusion fields.

Two networks (one per electrode) map (eps scale, r_hat, t_hat) to a raw value
in (0,1); a hard constraint turns that into a concentration that matches the
initial condition exactly at t=0. Training minimizes PDE residual + boundary
+ supervised-data mean squared errors with the in-house autodiff/optimizers;
inference is a batched forward pass of surface concentrations feeding the
algebraic terminal-voltage map.
"""

from __future__ import annotations

import json
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from battwin.autodiff import (
    DenseNet, forward, forward_tape, grad_weights, jet_forward, jet_grad_weights,
)
from battwin.errors import Divergence, ExtrapolationWarning
from battwin.optim import AdamState, adam_step, lbfgs_run
from battwin.params import ParameterSet
from battwin.solver import CurrentProfile, molar_flux, solve_spm, terminal_voltage

# encoder 3x50 -> feature 1x160 -> output 4x150 -> scalar
ARCHITECTURE = (3, 50, 50, 50, 160, 150, 150, 150, 150, 1)
ACTIVATIONS = ("tanh",) * 8 + ("sigmoid",)

EPS_BOX = (0.70, 1.00)

# physical time constant (s) of the initial-condition ramp F(t)
F_TIME_CONSTANT = 10.0


def constraint_factors(t_norm, sign_i: int, electrode: str, c_init: float,
                       c_max: float, t_final: float):
    """F(t_hat), F'(t_hat) and the amplitude A with c = c_init + F*A*raw.

    Charge (sign +1) drives the negative electrode toward c_max and the
    positive toward zero; discharge mirrors the two amplitudes.
    """
    tau = t_final / F_TIME_CONSTANT
    f = 1.0 - np.exp(-np.asarray(t_norm, dtype=float) * tau)
    f_prime = tau * np.exp(-np.asarray(t_norm, dtype=float) * tau)
    filling = (sign_i > 0) == (electrode in ("-", "minus"))
    amplitude = (c_max - c_init) if filling else -c_init
    return f, f_prime, amplitude


def enforce_hard_constraint(raw, t_norm, sign_i: int, electrode: str,
                            c_init: float, c_max: float, t_final: float):
    """Concentration (mol m^-3) with the t=0 initial condition built in."""
    f, _, amplitude = constraint_factors(t_norm, sign_i, electrode,
                                         c_init, c_max, t_final)
    return c_init + f * amplitude * np.asarray(raw, dtype=float)


@dataclass
class LossBreakdown:
    """Composite loss terms: boundary/initial, PDE residual, supervised data."""

    mse_u: float
    mse_f: float
    mse_d: float
    total: float = None

    def __post_init__(self):
        if self.total is None:
            self.total = self.mse_u + self.mse_f + self.mse_d


@dataclass
class CollocationSet:
    """Residual, boundary, and supervised collocation for both electrodes.

    All coordinates normalized: r_hat, t_hat in [0,1]; eps columns are scale
    factors in the search box. Residual/boundary time coordinates are stored
    as raw uniform draws and stretched per electrode at training time (an
    electrode at scale s saturates around t_hat ~ s, so later times are
    unreachable under the constant-current protocol).
    """

    residual: np.ndarray        # (n, 4): eps_plus, eps_minus, r_hat, u_t
    boundary_center: np.ndarray  # (m, 3): eps_plus, eps_minus, u_t  (r_hat = 0)
    boundary_surface: np.ndarray  # (m, 3): eps_plus, eps_minus, u_t (r_hat = 1)
    pairs: np.ndarray           # (n_pairs, 2) supervised (eps_plus, eps_minus)
    data_minus: np.ndarray      # (k, 4): scale, r_hat, t_hat, theta_ref
    data_plus: np.ndarray
    t_final: float
    eps_box: tuple = EPS_BOX

    @classmethod
    def generate(cls, params: ParameterSet, profile: CurrentProfile, *,
                 n_residual: int = 4096, n_boundary: int = 512,
                 n_pairs: int = 10, data_grid: tuple = (21, 41),
                 eps_box: tuple = EPS_BOX, seed: int = 0,
                 n_shells: int = 50, dt: float = 4.0,
                 v_cutoff: float = 4.2) -> "CollocationSet":
        rng = np.random.default_rng(seed)
        lo, hi = eps_box
        t_final = profile.total_duration

        res = qmc.LatinHypercube(d=4, seed=rng).random(n_residual)
        res[:, 0] = lo + (hi - lo) * res[:, 0]
        res[:, 1] = lo + (hi - lo) * res[:, 1]
        res[:, 2] = 0.02 + 0.98 * res[:, 2]  # keep residual points off r=0

        def faces(n):
            b = qmc.LatinHypercube(d=3, seed=rng).random(n)
            b[:, 0] = lo + (hi - lo) * b[:, 0]
            b[:, 1] = lo + (hi - lo) * b[:, 1]
            return b

        pairs = lo + (hi - lo) * qmc.LatinHypercube(d=2, seed=rng).random(n_pairs)

        n_r, n_t = data_grid
        data = {"-": [], "+": []}
        for s_plus, s_minus in pairs:
            run = solve_spm(params.with_scales(s_plus, s_minus), profile,
                            n_shells=n_shells, dt=dt,
                            v_limits=(-np.inf, v_cutoff), store_fields=True)
            t_hat = run.time / t_final
            t_idx = np.unique(np.linspace(0, len(t_hat) - 1, n_t).astype(int))
            for tag, scale, c_field, c_surf, grid, c_max in (
                ("-", s_minus, run.c_minus, run.c_surf_minus,
                 run.grid_minus, params.c_max_minus),
                ("+", s_plus, run.c_plus, run.c_surf_plus,
                 run.grid_plus, params.c_max_plus),
            ):
                r_hat_cells = grid.centers / grid.R
                r_targets = np.linspace(0.0, 1.0, n_r)
                for ti in t_idx:
                    # interpolate cell-centered values; r=1 uses the surface
                    # extrapolation the voltage map sees
                    theta = np.interp(r_targets, r_hat_cells,
                                      c_field[ti] / c_max)
                    theta[-1] = c_surf[ti] / c_max
                    rows = np.column_stack([
                        np.full(n_r, scale), r_targets,
                        np.full(n_r, t_hat[ti]), theta,
                    ])
                    data[tag].append(rows)
        return cls(
            residual=res,
            boundary_center=faces(n_boundary),
            boundary_surface=faces(n_boundary),
            pairs=pairs,
            data_minus=np.vstack(data["-"]),
            data_plus=np.vstack(data["+"]),
            t_final=t_final,
            eps_box=eps_box,
        )


@dataclass
class TrainingSchedule:
    adam_epochs: int = 2000
    adam_lr: float = 1e-3
    lbfgs_epochs: int = 2000
    lbfgs_step0: float = 0.01
    seed: int = 0
    # multipliers on the three loss terms (unweighted sum by default)
    w_u: float = 1.0
    w_f: float = 1.0
    w_d: float = 1.0


def desk_schedule(seed: int = 0) -> "TrainingSchedule":
    """Reference desk-scale schedule: Adam 2k + L-BFGS 2k, data term x20.

    The heavier data weight is needed for the cathode net, whose supervised
    term is otherwise drowned out by the residual term during the Adam phase.
    """
    return TrainingSchedule(adam_epochs=2000, lbfgs_epochs=2000,
                            w_d=20.0, seed=seed)


@dataclass
class PinnModel:
    """Trained surrogate: per-electrode nets plus everything inference needs."""

    net_minus: DenseNet
    net_plus: DenseNet
    params: ParameterSet
    profile: CurrentProfile
    protocol: str
    sign_i: int
    t_final: float
    eps_box: tuple = EPS_BOX
    history: list = field(default_factory=list)   # LossBreakdown per epoch pair
    seed: int = 0

    def _net(self, electrode):
        return self.net_minus if electrode in ("-", "minus") else self.net_plus

    def _consts(self, electrode):
        p = self.params
        if electrode in ("-", "minus"):
            return p.c_init_minus, p.c_max_minus
        return p.c_init_plus, p.c_max_plus

    def concentration(self, electrode: str, scale, r_hat, t_norm) -> np.ndarray:
        """Enforced concentration at arbitrary normalized points (batched)."""
        scale, r_hat, t_norm = np.broadcast_arrays(
            np.asarray(scale, dtype=float), np.asarray(r_hat, dtype=float),
            np.asarray(t_norm, dtype=float))
        x = np.column_stack([scale.ravel(), r_hat.ravel(), t_norm.ravel()])
        raw = forward(self._net(electrode), x)[:, 0]
        c_init, c_max = self._consts(electrode)
        c = enforce_hard_constraint(raw, t_norm.ravel(), self.sign_i, electrode,
                                    c_init, c_max, self.t_final)
        return c.reshape(scale.shape)

    def surface_concentrations(self, eps_pairs, times):
        """(n_pairs, n_t) surface concentration per electrode, one batched pass."""
        eps_pairs = np.atleast_2d(np.asarray(eps_pairs, dtype=float))
        times = np.asarray(times, dtype=float)
        lo, hi = self.eps_box
        if np.any(eps_pairs < lo - 1e-12) or np.any(eps_pairs > hi + 1e-12):
            warnings.warn("eps scales outside the trained box; extrapolating",
                          ExtrapolationWarning, stacklevel=2)
        t_norm = times / self.t_final
        out = []
        for col, electrode in ((1, "-"), (0, "+")):
            scales = np.repeat(eps_pairs[:, col], len(times))
            tt = np.tile(t_norm, len(eps_pairs))
            x = np.column_stack([scales, np.ones_like(scales), tt])
            raw = forward(self._net(electrode), x)[:, 0]
            c_init, c_max = self._consts(electrode)
            c = enforce_hard_constraint(raw, tt, self.sign_i, electrode,
                                        c_init, c_max, self.t_final)
            out.append(c.reshape(len(eps_pairs), len(times)))
        return out[0], out[1]  # c_surf_minus, c_surf_plus

    def save(self, path) -> None:
        doc = {
            "net_minus": self.net_minus.to_dict(),
            "net_plus": self.net_plus.to_dict(),
            "params": json.loads(self.params.to_json()),
            "profile_steps": [list(s) for s in self.profile.steps],
            "protocol": self.protocol,
            "sign_i": self.sign_i,
            "t_final": self.t_final,
            "eps_box": list(self.eps_box),
            "seed": self.seed,
            "history": [[h.mse_u, h.mse_f, h.mse_d, h.total] for h in self.history],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "PinnModel":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            net_minus=DenseNet.from_dict(doc["net_minus"]),
            net_plus=DenseNet.from_dict(doc["net_plus"]),
            params=ParameterSet(**doc["params"]),
            profile=CurrentProfile(tuple(tuple(s) for s in doc["profile_steps"])),
            protocol=doc["protocol"],
            sign_i=doc["sign_i"],
            t_final=doc["t_final"],
            eps_box=tuple(doc["eps_box"]),
            history=[LossBreakdown(*h[:3]) for h in doc["history"]],
            seed=doc["seed"],
        )

    def history_to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,mse_u,mse_f,mse_d,total\n")
            for i, h in enumerate(self.history):
                fh.write(f"{i},{h.mse_u:.9g},{h.mse_f:.9g},{h.mse_d:.9g},"
                         f"{h.total:.9g}\n")


def pde_residual(model: PinnModel, points: np.ndarray) -> tuple:
    """Nondimensional diffusion residual per electrode at (e+, e-, r, t) rows."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = []
    for col, electrode, diffusivity, radius in (
        (0, "+", model.params.D_plus, model.params.R_plus),
        (1, "-", model.params.D_minus, model.params.R_minus),
    ):
        c_init, c_max = model._consts(electrode)
        x = np.column_stack([pts[:, col], pts[:, 2], pts[:, 3]])
        tape = jet_forward(model._net(electrode), x, (1, 2), second=(1,))
        v = tape.value[:, 0]
        vr = tape.first[0][:, 0]
        vrr = tape.second_out[0][:, 0]
        vt = tape.first[1][:, 0]
        f, f_prime, amp = constraint_factors(
            pts[:, 3], model.sign_i, electrode, c_init, c_max, model.t_final)
        kappa = diffusivity * model.t_final / radius ** 2
        c_t = f_prime * amp * v + f * amp * vt
        c_r = f * amp * vr
        c_rr = f * amp * vrr
        res = (c_t - kappa * (c_rr + 2.0 / pts[:, 2] * c_r)) / c_max
        out.append(res)
    return out[0], out[1]  # (plus, minus)


def _electrode_problem(colloc: CollocationSet, params: ParameterSet,
                       profile: CurrentProfile, electrode: str, sign_i: int):
    """Precompute static inputs and linear adjoint coefficients for one net."""
    t_final = colloc.t_final
    if electrode in ("-", "minus"):
        col, data = 1, colloc.data_minus
        c_init, c_max = params.c_init_minus, params.c_max_minus
        diffusivity, radius = params.D_minus, params.R_minus
    else:
        col, data = 0, colloc.data_plus
        c_init, c_max = params.c_init_plus, params.c_max_plus
        diffusivity, radius = params.D_plus, params.R_plus

    # PDE residual block: an electrode at scale s saturates near t_hat ~ s
    scale = colloc.residual[:, col]
    r_hat = colloc.residual[:, 2]
    t_hat = colloc.residual[:, 3] * scale
    x_f = np.column_stack([scale, r_hat, t_hat])
    f, f_prime, amp = constraint_factors(t_hat, sign_i, electrode,
                                         c_init, c_max, t_final)
    kappa = diffusivity * t_final / radius ** 2
    coef_f = {
        "v": f_prime * amp / c_max,
        "vt": f * amp / c_max,
        "vr": -kappa * (2.0 / r_hat) * f * amp / c_max,
        "vrr": -kappa * f * amp / c_max,
    }

    # boundary block: center (theta_r = 0) then surface (flux condition),
    # stacked into one batch; the half-step offset keeps the surface points
    # off current-step discontinuities
    bc, bs = colloc.boundary_center, colloc.boundary_surface
    sc_b = np.concatenate([bc[:, col], bs[:, col]])
    t_b = np.concatenate([bc[:, 2], bs[:, 2]]) * sc_b
    r_b = np.concatenate([np.zeros(len(bc)), np.ones(len(bs))])
    x_b = np.column_stack([sc_b, r_b, t_b])
    f_b, _, _ = constraint_factors(t_b, sign_i, electrode, c_init, c_max, t_final)
    coef_b = f_b * amp / c_max       # multiplies v_r
    dt_half = 0.5 * t_final / max(len(t_b), 1)
    current = np.array([profile.current_at(max(t * t_final, dt_half))
                        for t in t_b])
    target_b = np.zeros(len(t_b))
    for i in range(len(bc), len(t_b)):
        p_i = (params.with_scales(sc_b[i], 1.0) if electrode in ("+", "plus")
               else params.with_scales(1.0, sc_b[i]))
        j = molar_flux(p_i, electrode, current[i])
        target_b[i] = j * radius / (diffusivity * c_max)

    # supervised block
    x_d = data[:, :3]
    theta_ref = data[:, 3]
    f_d, _, _ = constraint_factors(data[:, 2], sign_i, electrode,
                                   c_init, c_max, t_final)
    coef_d = f_d * amp / c_max
    theta0 = c_init / c_max
    return {
        "x_f": x_f, "coef_f": coef_f,
        "x_b": x_b, "coef_b": coef_b, "target_b": target_b,
        "x_d": x_d, "coef_d": coef_d, "theta_ref": theta_ref, "theta0": theta0,
    }


def _loss_and_grad(net: DenseNet, prob: dict, theta: np.ndarray,
                   w_u: float = 1.0, w_f: float = 1.0, w_d: float = 1.0):
    net.set_params(theta)
    n_f, n_b, n_d = len(prob["x_f"]), len(prob["x_b"]), len(prob["x_d"])

    tape_f = jet_forward(net, prob["x_f"], (1, 2), second=(1,))
    cf = prob["coef_f"]
    res_f = (cf["v"] * tape_f.value[:, 0]
             + cf["vr"] * tape_f.first[0][:, 0]
             + cf["vrr"] * tape_f.second_out[0][:, 0]
             + cf["vt"] * tape_f.first[1][:, 0])
    mse_f = w_f * float(np.mean(res_f ** 2))
    w = w_f * 2.0 / n_f * res_f
    g1 = np.zeros_like(tape_f.first)
    g2 = np.zeros_like(tape_f.second_out)
    g1[0, :, 0] = w * cf["vr"]
    g1[1, :, 0] = w * cf["vt"]
    g2[0, :, 0] = w * cf["vrr"]
    grad = jet_grad_weights(tape_f, (w * cf["v"])[:, None], g1, g2)

    tape_b = jet_forward(net, prob["x_b"], (1,), second=())
    res_b = prob["coef_b"] * tape_b.first[0][:, 0] + prob["target_b"]
    mse_u = w_u * float(np.mean(res_b ** 2))
    g1b = np.zeros_like(tape_b.first)
    g1b[0, :, 0] = w_u * 2.0 / n_b * res_b * prob["coef_b"]
    grad += jet_grad_weights(tape_b, np.zeros_like(tape_b.value), g1b)

    y_d, tape_d = forward_tape(net, prob["x_d"])
    res_d = prob["theta0"] + prob["coef_d"] * y_d[:, 0] - prob["theta_ref"]
    mse_d = w_d * float(np.mean(res_d ** 2))
    grad += grad_weights(tape_d,
                         (w_d * 2.0 / n_d * res_d * prob["coef_d"])[:, None])

    return LossBreakdown(mse_u, mse_f, mse_d), grad


def train_pinn(colloc: CollocationSet, params: ParameterSet,
               profile: CurrentProfile, schedule: TrainingSchedule = None,
               *, architecture: tuple = ARCHITECTURE,
               activations: tuple = ACTIVATIONS,
               verbose: bool = False) -> PinnModel:
    """Two-stage (Adam then L-BFGS) training of both electrode networks."""
    if schedule is None:
        schedule = TrainingSchedule()
    sign_i = 1 if profile.steps[0][1] >= 0 else -1
    nets = {}
    histories = {}
    for k, electrode in enumerate(("-", "+")):
        net = DenseNet.init(architecture, list(activations),
                            seed=schedule.seed + 1000 * k)
        prob = _electrode_problem(colloc, params, profile, electrode, sign_i)
        history = []
        last_finite = net.get_params()

        def fun(theta, _prob=prob, _net=net, _hist=history, _lf=[last_finite]):
            loss, grad = _loss_and_grad(_net, _prob, theta,
                                        schedule.w_u, schedule.w_f, schedule.w_d)
            if np.isfinite(loss.total):
                _lf[0] = theta
            _hist.append(loss)
            return loss.total, grad

        state = AdamState(net.get_params())
        t0 = _time.perf_counter()
        for epoch in range(schedule.adam_epochs):
            total, grad = fun(state.x)
            if not np.isfinite(total):
                net.set_params(last_finite)
                raise Divergence(f"non-finite loss at Adam epoch {epoch}")
            state = adam_step(state, grad, schedule.adam_lr)
            if verbose and epoch % 200 == 0:
                print(f"[{electrode}] adam {epoch}: {total:.3e} "
                      f"({_time.perf_counter() - t0:.0f}s)", flush=True)
        x, f_final, _ = lbfgs_run(fun, state.x, schedule.lbfgs_epochs,
                                  step0=schedule.lbfgs_step0)
        if verbose:
            print(f"[{electrode}] lbfgs final: {f_final:.3e} "
                  f"({_time.perf_counter() - t0:.0f}s)", flush=True)
        net.set_params(x)
        nets[electrode] = net
        histories[electrode] = history
    merged = [LossBreakdown(a.mse_u + b.mse_u, a.mse_f + b.mse_f,
                            a.mse_d + b.mse_d)
              for a, b in zip(histories["-"], histories["+"])]
    return PinnModel(
        net_minus=nets["-"], net_plus=nets["+"], params=params,
        profile=profile, protocol="", sign_i=sign_i,
        t_final=colloc.t_final, eps_box=colloc.eps_box,
        history=merged, seed=schedule.seed,
    )


def refine_pinn(model: PinnModel, colloc: CollocationSet,
                params: ParameterSet, *, lbfgs_epochs=(500, 2000),
                w_u: float = 1.0, w_f: float = 1.0, w_d: float = 20.0,
                step0: float = 0.01) -> PinnModel:
    """Continue L-BFGS from a trained model; returns a new refined model.

    lbfgs_epochs: per-electrode iteration counts (minus, plus). The cathode
    net converges more slowly, so it typically gets the larger share.
    """
    import copy

    refined = copy.deepcopy(model)
    for net, electrode, iters in ((refined.net_minus, "-", lbfgs_epochs[0]),
                                  (refined.net_plus, "+", lbfgs_epochs[1])):
        if iters <= 0:
            continue
        prob = _electrode_problem(colloc, params, refined.profile, electrode,
                                  refined.sign_i)

        def fun(theta, _prob=prob, _net=net):
            loss, grad = _loss_and_grad(_net, _prob, theta, w_u, w_f, w_d)
            return loss.total, grad

        x, _, _ = lbfgs_run(fun, net.get_params(), iters, step0=step0)
        net.set_params(x)
    return refined


def predict_voltage(model: PinnModel, eps_pair, times) -> np.ndarray:
    """Terminal voltage on a time grid; batched if eps_pair is (n, 2)."""
    eps_pair = np.asarray(eps_pair, dtype=float)
    single = eps_pair.ndim == 1
    times = np.asarray(times, dtype=float)
    pairs = np.atleast_2d(eps_pair)
    cs_minus, cs_plus = model.surface_concentrations(pairs, times)
    current = np.array([model.profile.current_at(t) for t in times])
    volts = np.empty_like(cs_minus)
    for i, (s_plus, s_minus) in enumerate(pairs):
        # overpotential depends on the candidate volume fractions
        p_i = model.params.with_scales(s_plus, s_minus)
        for cur in np.unique(current):
            sel = current == cur
            volts[i, sel] = terminal_voltage(
                p_i, cs_plus[i, sel], cs_minus[i, sel], float(cur))
    return volts[0] if single else volts
