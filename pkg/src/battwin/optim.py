"""Optimizers used for surrogate training and parameter identification.

Adam and a two-loop-recursion L-BFGS operate on flat parameter vectors and
pair with the hand-rolled autodiff; differential evolution (DE/rand/1/bin)
drives the inverse problem over box-constrained physical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    x: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.x)
        if self.v is None:
            self.v = np.zeros_like(self.x)


def adam_step(state: AdamState, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One Adam update with bias correction; mutates and returns state."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    state.x = state.x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lbfgs_run(fun, x0: np.ndarray, iters: int, *, step0: float = 1.0,
              history: int = 10, tol_grad: float = 1e-12,
              armijo_c: float = 1e-4, max_backtracks: int = 25,
              callback=None):
    """Minimize fun(x) -> (f, grad) with limited-memory BFGS.

    Two-loop recursion with `history` curvature pairs and Armijo backtracking.
    The first iteration scales the steepest-descent step by `step0`; when the
    line search fails a damped gradient step is taken instead of aborting, so
    the iteration is monotone by construction. Returns (x, f, trace) where
    trace is the list of accepted objective values.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    trace = [float(f)]
    s_hist, y_hist, rho_hist = [], [], []
    for it in range(iters):
        gnorm = np.linalg.norm(g)
        if gnorm <= tol_grad:
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        else:
            q *= step0 / max(gnorm, 1.0)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        d = -q
        slope = np.dot(g, d)
        if slope >= 0.0:  # not a descent direction; fall back to steepest descent
            d = -g
            slope = -gnorm * gnorm
        # Armijo backtracking
        t = 1.0
        accepted = False
        for _ in range(max_backtracks):
            f_new, g_new = fun(x + t * d)
            if np.isfinite(f_new) and f_new <= f + armijo_c * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # damped gradient fallback keeps progress monotone
            t_fb = step0 / max(gnorm, 1.0)
            for _ in range(max_backtracks):
                f_new, g_new = fun(x - t_fb * g)
                if np.isfinite(f_new) and f_new < f:
                    d, t, accepted = -g, t_fb, True
                    break
                t_fb *= 0.5
            if not accepted:
                break  # converged to line-search precision
        step = t * d
        x_new = x + step
        y_vec = g_new - g
        sy = np.dot(step, y_vec)
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(y_vec):
            s_hist.append(step)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if callback is not None:
            callback(it, x, f)
    return x, f, trace


@dataclass
class DEConfig:
    """DE/rand/1/bin settings; bounds is a (D, 2) array of [low, high]."""

    bounds: np.ndarray
    pop_size: int = 100
    iterations: int = 10
    mutation: float = 0.8
    crossover: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if self.bounds.shape[1] != 2 or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("bounds must be (D, 2) with low < high")
        if self.pop_size < 4:
            raise ValueError("DE/rand/1 needs a population of at least 4")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass
class DEResult:
    x: np.ndarray
    fitness: float
    n_evals: int
    history: np.ndarray      # best fitness after each generation
    population: np.ndarray   # final population
    pop_fitness: np.ndarray


def differential_evolution(fitness, config: DEConfig, *, batch_fitness=None,
                           callback=None) -> DEResult:
    """Minimize a black-box fitness over a box with DE/rand/1/bin.

    The initial random population counts as the first generation, so the total
    budget is pop_size * iterations evaluations. Non-finite fitness values are
    treated as +inf; trial vectors are clipped to the box. `batch_fitness`, if
    given, evaluates an (n, D) array in one call (used by the surrogate
    backend); selection is greedy so the best member never degrades.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.bounds[:, 0], config.bounds[:, 1]
    dim = len(lo)
    np_, F, CR = config.pop_size, config.mutation, config.crossover

    def evaluate(block):
        if batch_fitness is not None:
            vals = np.asarray(batch_fitness(block), dtype=float)
        else:
            vals = np.array([fitness(row) for row in block], dtype=float)
        vals[~np.isfinite(vals)] = np.inf
        return vals

    pop = rng.uniform(lo, hi, size=(np_, dim))
    fit = evaluate(pop)
    n_evals = np_
    history = [float(fit.min())]
    for gen in range(1, config.iterations):
        idx = np.arange(np_)
        trials = np.empty_like(pop)
        for i in range(np_):
            r1, r2, r3 = rng.choice(np.delete(idx, i), size=3, replace=False)
            mutant = pop[r1] + F * (pop[r2] - pop[r3])
            cross = rng.random(dim) < CR
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        np.clip(trials, lo, hi, out=trials)
        trial_fit = evaluate(trials)
        n_evals += np_
        better = trial_fit <= fit
        pop[better] = trials[better]
        fit[better] = trial_fit[better]
        history.append(float(fit.min()))
        if callback is not None:
            callback(gen, pop, fit)
    best = int(np.argmin(fit))
    return DEResult(x=pop[best].copy(), fitness=float(fit[best]),
                    n_evals=n_evals, history=np.array(history),
                    population=pop, pop_fitness=fit)
