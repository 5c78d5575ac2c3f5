"""SPM parameter set: geometry, transport, kinetics, and concentrations.

All values in SI units. The nominal set corresponds to a 76 Ah NCM811/graphite
pouch cell (values from the reference design table).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

# Physical constants
FARADAY = 96485.33212  # C mol^-1
R_GAS = 8.314462618    # J mol^-1 K^-1


@dataclass(frozen=True)
class ParameterSet:
    """Full SPM parameter vector.

    The six identifiable parameters are D_plus, D_minus, eps_plus, eps_minus,
    k_plus, k_minus; aging studies scale eps_plus/eps_minus.
    """

    L_plus: float       # cathode thickness (m)
    L_minus: float      # anode thickness (m)
    L_sep: float        # separator thickness (m)
    A: float            # electrode surface area (m^2)
    N_parallel: int     # electrodes in parallel
    eps_plus: float     # cathode active material volume fraction
    eps_minus: float    # anode active material volume fraction
    R_plus: float       # cathode particle radius (m)
    R_minus: float      # anode particle radius (m)
    D_plus: float       # cathode solid diffusivity (m^2 s^-1)
    D_minus: float      # anode solid diffusivity (m^2 s^-1)
    k_plus: float       # cathode reaction rate coefficient (m^2.5 mol^-0.5 s^-1)
    k_minus: float      # anode reaction rate coefficient (m^2.5 mol^-0.5 s^-1)
    c_max_plus: float   # cathode max concentration (mol m^-3)
    c_max_minus: float  # anode max concentration (mol m^-3)
    c_init_plus: float  # cathode initial concentration (mol m^-3)
    c_init_minus: float # anode initial concentration (mol m^-3)
    c_e: float          # electrolyte concentration (mol m^-3)
    T: float            # temperature (K)
    F: float = FARADAY
    R_gas: float = R_GAS

    def __post_init__(self):
        positive = (
            "L_plus", "L_minus", "L_sep", "A", "N_parallel",
            "R_plus", "R_minus", "D_plus", "D_minus", "k_plus", "k_minus",
            "c_max_plus", "c_max_minus", "c_e", "T",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for tag in ("plus", "minus"):
            eps = getattr(self, f"eps_{tag}")
            if not 0.0 < eps <= 1.0:
                raise ValueError(f"eps_{tag} must be in (0, 1]")
            c0 = getattr(self, f"c_init_{tag}")
            cmax = getattr(self, f"c_max_{tag}")
            if not 0.0 < c0 < cmax:
                raise ValueError(f"c_init_{tag} must be in (0, c_max_{tag})")

    def with_scales(self, eps_plus_scale: float, eps_minus_scale: float) -> "ParameterSet":
        """Return a copy with the active-material volume fractions scaled."""
        return replace(
            self,
            eps_plus=self.eps_plus * eps_plus_scale,
            eps_minus=self.eps_minus * eps_minus_scale,
        )

    def replace(self, **kwargs) -> "ParameterSet":
        return replace(self, **kwargs)

    def to_json(self, path=None) -> str:
        """Serialize as a flat key-value JSON document (SI units)."""
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "ParameterSet":
        """Load from a JSON string or file path."""
        text = source
        if not str(source).lstrip().startswith("{"):
            with open(source) as fh:
                text = fh.read()
        return cls(**json.loads(text))


def nominal_parameters() -> ParameterSet:
    """Reference design and material parameter values for the 76 Ah pouch cell."""
    return ParameterSet(
        L_plus=57.955e-6,
        L_minus=80.12e-6,
        L_sep=12e-6,
        A=0.02534,
        N_parallel=78,
        eps_plus=0.714,
        eps_minus=0.721,
        R_plus=3e-6,
        R_minus=5e-6,
        D_plus=4.241e-14,
        D_minus=1.135e-14,
        k_plus=1.695e-7,
        k_minus=2.747e-6,
        c_max_plus=49034.0,
        c_max_minus=31085.0,
        c_init_plus=45421.0,
        c_init_minus=1554.0,
        c_e=1000.0,
        T=298.15,
    )


NOMINAL_CAPACITY_AH = 76.0  # nameplate capacity of the reference cell
