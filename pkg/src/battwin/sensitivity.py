"""One-at-a-time sensitivity analysis over the six identifiable SPM parameters.

Each parameter is swept over a +/-10% band around its nominal value (10 values
by default); the spread of the resulting voltage trajectories defines a
sensitivity index per parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from battwin.errors import LengthMismatch
from battwin.params import ParameterSet, NOMINAL_CAPACITY_AH
from battwin.solver import CurrentProfile, solve_spm

# the six identifiable parameters, in the ParameterSet field names
IDENTIFIABLE_PARAMETERS = (
    "D_plus", "D_minus", "eps_plus", "eps_minus", "k_plus", "k_minus",
)

PRETTY_NAMES = {
    "D_plus": "D_s_plus",
    "D_minus": "D_s_minus",
    "eps_plus": "eps_plus",
    "eps_minus": "eps_minus",
    "k_plus": "k_plus",
    "k_minus": "k_minus",
}


@dataclass(frozen=True)
class IdentifiableSet:
    """The six identifiable parameters with nominal values and sweep bounds."""

    names: tuple
    nominal: tuple
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.names) != 6:
            raise ValueError("identifiable set must contain exactly six parameters")
        for lo, nom, hi in zip(self.lower, self.nominal, self.upper):
            if not lo <= nom <= hi:
                raise ValueError("bounds must contain the nominal value")

    @classmethod
    def from_params(cls, params: ParameterSet, span: float = 0.10) -> "IdentifiableSet":
        nominal = tuple(getattr(params, n) for n in IDENTIFIABLE_PARAMETERS)
        return cls(
            names=IDENTIFIABLE_PARAMETERS,
            nominal=nominal,
            lower=tuple(v * (1 - span) for v in nominal),
            upper=tuple(v * (1 + span) for v in nominal),
        )


@dataclass
class SensitivityReport:
    """Per-parameter sensitivity indices, ranking, and raw voltage responses."""

    names: tuple
    si: np.ndarray                  # time-averaged pointwise std (V)
    si_trajectory_mean: np.ndarray  # std of trajectory means (V), for comparison
    ranking: tuple                  # names sorted by decreasing SI
    time: np.ndarray
    trajectories: dict              # name -> (n_samples, n_t) voltage array

    def to_csv(self, path) -> None:
        order = {n: r + 1 for r, n in enumerate(self.ranking)}
        with open(path, "w") as fh:
            fh.write("parameter,si_V,si_trajectory_mean_V,rank\n")
            for i, n in enumerate(self.names):
                fh.write(f"{PRETTY_NAMES[n]},{self.si[i]:.12g},"
                         f"{self.si_trajectory_mean[i]:.12g},{order[n]}\n")

    def trajectories_to_csv(self, path) -> None:
        cols = ["time_s"]
        data = [self.time]
        for n in self.names:
            for s in range(self.trajectories[n].shape[0]):
                cols.append(f"{PRETTY_NAMES[n]}_{s}")
                data.append(self.trajectories[n][s])
        np.savetxt(path, np.column_stack(data), delimiter=",",
                   header=",".join(cols), comments="", fmt="%.9g")


def perturb_grid(nominal: float, span: float = 0.10, n: int = 10) -> np.ndarray:
    """n uniformly spaced values on [nominal*(1-span), nominal*(1+span)]."""
    if not 0.0 < span < 1.0:
        raise ValueError("span must be in (0, 1)")
    if n < 2:
        raise ValueError("need at least two samples")
    return np.linspace(nominal * (1.0 - span), nominal * (1.0 + span), n)


def sensitivity_index(responses: np.ndarray) -> float:
    """Time-averaged pointwise population standard deviation across responses.

    responses: (n_samples, n_t) voltage trajectories on a common time grid.
    """
    responses = np.asarray(responses, dtype=float)
    if responses.ndim != 2:
        raise LengthMismatch("responses must be a 2-D (samples x time) array")
    return float(np.mean(np.std(responses, axis=0)))


def _trajectory_mean_index(responses: np.ndarray) -> float:
    # alternative statistic: std of the per-trajectory mean voltages
    return float(np.std(np.mean(responses, axis=1)))


def run_oat_analysis(
    params: ParameterSet,
    profile: CurrentProfile = None,
    *,
    span: float = 0.10,
    n_samples: int = 10,
    n_shells: int = 30,
    dt: float = 4.0,
) -> SensitivityReport:
    """Sweep each identifiable parameter and report voltage sensitivities.

    Default profile: C/3 CC charge over a fixed window (no voltage cutoff, so
    all perturbed runs share one time grid).
    """
    if profile is None:
        profile = CurrentProfile.constant(NOMINAL_CAPACITY_AH / 3.0, 9600.0)
    si = np.empty(6)
    si_tm = np.empty(6)
    trajectories = {}
    time = None
    for i, name in enumerate(IDENTIFIABLE_PARAMETERS):
        values = perturb_grid(getattr(params, name), span, n_samples)
        runs = []
        for v in values:
            res = solve_spm(params.replace(**{name: v}), profile,
                            n_shells=n_shells, dt=dt,
                            v_limits=(-np.inf, np.inf), store_fields=False)
            runs.append(res.voltage)
            time = res.time
        runs = np.vstack(runs)
        if any(len(r) != runs.shape[1] for r in runs):
            raise LengthMismatch("perturbed runs terminated at different times")
        trajectories[name] = runs
        si[i] = sensitivity_index(runs)
        si_tm[i] = _trajectory_mean_index(runs)
    order = np.argsort(-si)
    ranking = tuple(IDENTIFIABLE_PARAMETERS[j] for j in order)
    return SensitivityReport(
        names=IDENTIFIABLE_PARAMETERS, si=si, si_trajectory_mean=si_tm,
        ranking=ranking, time=time, trajectories=trajectories,
    )
