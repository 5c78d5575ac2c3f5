"""Open-circuit potential curves for the NCM811 cathode and graphite anode.

Each curve is a closed-form fit in the stoichiometry theta = c_surf / c_max:
a linear part, an optional exponential term, and a sum of tanh terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from battwin.errors import DomainError


@dataclass(frozen=True)
class OcpCurve:
    """U(theta) evaluator for one electrode.

    U = lin*theta + const + exp_a*exp(exp_b*theta) + sum_i a_i*tanh(b_i*(theta - c_i))
    """

    electrode: str  # "+" or "-"
    lin: float
    const: float
    exp_a: float
    exp_b: float
    tanh_terms: tuple = field(default_factory=tuple)  # ((a, b, c), ...)

    def __call__(self, theta):
        return eval_ocp(self, theta)

    def derivative(self, theta):
        """dU/dtheta, used by voltage-sensitivity diagnostics."""
        theta = np.asarray(theta, dtype=float)
        d = np.full_like(theta, self.lin)
        if self.exp_a != 0.0:
            d = d + self.exp_a * self.exp_b * np.exp(self.exp_b * theta)
        for a, b, c in self.tanh_terms:
            d = d + a * b / np.cosh(b * (theta - c)) ** 2
        return d


def eval_ocp(curve: OcpCurve, theta):
    """Evaluate the closed-form OCP at stoichiometry theta in (0, 1)."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or np.any(theta >= 1.0):
        raise DomainError(f"stoichiometry outside (0, 1): {theta}")
    u = curve.lin * theta + curve.const
    if curve.exp_a != 0.0:
        u = u + curve.exp_a * np.exp(curve.exp_b * theta)
    for a, b, c in curve.tanh_terms:
        u = u + a * np.tanh(b * (theta - c))
    return u if u.ndim else float(u)


GRAPHITE_OCP = OcpCurve(
    electrode="-",
    lin=0.0,
    const=1.124,
    exp_a=7.196e-13,
    exp_b=26.795,
    tanh_terms=(
        (-12.482, 27.588, -0.0203),
        (0.334, 5.231, 0.3146),
        (1.002, 32.608, 0.0998),
        (22.562, -1.073, 1.4365),
        (-9.089, -1.814, 0.9459),
        (0.930, -35.858, 0.1006),
    ),
)

NCM811_OCP = OcpCurve(
    electrode="+",
    lin=-4.407,
    const=6.538,
    exp_a=0.0,
    exp_b=0.0,
    tanh_terms=(
        (31.231, -4.093, 0.4354),
        (13.375, 4.967, 0.3991),
        (0.564, 11.457, 0.2319),
        (-14.648, 3.974, 0.6176),
        (0.478, -59.301, 0.9554),
        (33.344, 3.636, 0.5499),
    ),
)


def scalar_evaluator(curve: OcpCurve):
    """Fast scalar-only U(theta) closure for solver hot loops (no domain check)."""
    terms = tuple(curve.tanh_terms)
    lin, const, ea, eb = curve.lin, curve.const, curve.exp_a, curve.exp_b

    def u(theta: float) -> float:
        val = lin * theta + const
        if ea:
            val += ea * math.exp(eb * theta)
        for a, b, c in terms:
            val += a * math.tanh(b * (theta - c))
        return val

    return u


def ocp_for(electrode: str) -> OcpCurve:
    if electrode in ("+", "plus", "pos"):
        return NCM811_OCP
    if electrode in ("-", "minus", "neg"):
        return GRAPHITE_OCP
    raise ValueError(f"unknown electrode tag {electrode!r}")
